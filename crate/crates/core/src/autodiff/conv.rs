//! Same-size 2-D cross-correlation with dilation, groups and zero or
//! circular padding.
//!
//! Two independent kernels exist: a direct nested loop and an im2col + GEMM
//! path. The graph uses im2col; the direct loop is kept as a cross-check.

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    #[default]
    Zeros,
    Circular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvConfig {
    pub dilation: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Default for ConvConfig {
    fn default() -> Self {
        Self {
            dilation: 1,
            padding: Padding::Zeros,
            groups: 1,
        }
    }
}

impl ConvConfig {
    pub fn with_padding(padding: Padding) -> Self {
        Self {
            padding,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvAlgorithm {
    Direct,
    Im2col,
}

/// Validated geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    groups: usize,
    cin_g: usize,
    cout_g: usize,
    dilation: usize,
    padding: Padding,
}

impl ConvGeom {
    pub(crate) fn new<T: Real>(
        input: &Tensor<T>,
        kernel: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        cfg: ConvConfig,
    ) -> Result<Self, AutodiffError> {
        let (n, cin, h, w) = input.dims4()?;
        let (cout, cin_g, kh, kw) = kernel.dims4()?;
        if cfg.groups == 0 || cfg.dilation == 0 {
            return Err(AutodiffError::Shape(
                "groups and dilation must be positive".into(),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(AutodiffError::Shape(format!(
                "kernel size {kh}x{kw} must be odd for same padding"
            )));
        }
        if cin % cfg.groups != 0 || cout % cfg.groups != 0 {
            return Err(AutodiffError::Shape(format!(
                "groups {} must divide input channels {cin} and output channels {cout}",
                cfg.groups
            )));
        }
        if cin_g != cin / cfg.groups {
            return Err(AutodiffError::Shape(format!(
                "kernel expects {cin_g} input channels per group, input provides {}",
                cin / cfg.groups
            )));
        }
        if let Some(b) = bias {
            if b.len() != cout {
                return Err(AutodiffError::Shape(format!(
                    "bias has {} entries for {cout} output channels",
                    b.len()
                )));
            }
        }
        Ok(Self {
            n,
            cin,
            cout,
            h,
            w,
            kh,
            kw,
            groups: cfg.groups,
            cin_g,
            cout_g: cout / cfg.groups,
            dilation: cfg.dilation,
            padding: cfg.padding,
        })
    }

    fn taps(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }

    /// Source coordinate for output position `pos` and kernel offset `k`,
    /// or `None` when it falls into zero padding.
    #[inline]
    fn source(&self, pos: usize, k: usize, ksize: usize, extent: usize) -> Option<usize> {
        let off = (k as isize - (ksize / 2) as isize) * self.dilation as isize;
        let src = pos as isize + off;
        match self.padding {
            Padding::Zeros => (0..extent as isize).contains(&src).then_some(src as usize),
            Padding::Circular => Some(src.rem_euclid(extent as isize) as usize),
        }
    }

    /// Per kernel offset, the source index for every output position along one axis.
    fn source_table(&self, ksize: usize, extent: usize) -> Vec<Vec<Option<usize>>> {
        (0..ksize)
            .map(|k| (0..extent).map(|p| self.source(p, k, ksize, extent)).collect())
            .collect()
    }
}

fn im2col<T: Real>(
    g: &ConvGeom,
    input: &[T],
    rows: &[Vec<Option<usize>>],
    cols_src: &[Vec<Option<usize>>],
    cols: &mut [T],
) {
    let hw = g.hw();
    for ci in 0..g.cin_g {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[r * hw..(r + 1) * hw];
                for y in 0..g.h {
                    let row = &mut dst[y * g.w..(y + 1) * g.w];
                    match rows[ky][y] {
                        None => row.fill(T::zero()),
                        Some(sy) => {
                            let src_row = &plane[sy * g.w..(sy + 1) * g.w];
                            for (x, out) in row.iter_mut().enumerate() {
                                *out = match cols_src[kx][x] {
                                    Some(sx) => src_row[sx],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(
    g: &ConvGeom,
    cols: &[T],
    rows: &[Vec<Option<usize>>],
    cols_src: &[Vec<Option<usize>>],
    grad_input: &mut [T],
) {
    let hw = g.hw();
    for ci in 0..g.cin_g {
        let plane = &mut grad_input[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let r = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[r * hw..(r + 1) * hw];
                for y in 0..g.h {
                    if let Some(sy) = rows[ky][y] {
                        let row = &src[y * g.w..(y + 1) * g.w];
                        for (x, &v) in row.iter().enumerate() {
                            if let Some(sx) = cols_src[kx][x] {
                                plane[sy * g.w + sx] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
    algo: ConvAlgorithm,
) -> Tensor<T> {
    match algo {
        ConvAlgorithm::Direct => forward_direct(input, kernel, bias, g),
        ConvAlgorithm::Im2col => forward_im2col(input, kernel, bias, g),
    }
}

fn forward_im2col<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let hw = g.hw();
    let taps = g.taps();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    let rows = g.source_table(g.kh, g.h);
    let colsrc = g.source_table(g.kw, g.w);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); taps * hw]
    };
    for b in 0..g.n {
        for grp in 0..g.groups {
            let in_off = (b * g.cin + grp * g.cin_g) * hw;
            let inp = &input.data()[in_off..in_off + g.cin_g * hw];
            let cols_ref: &[T] = if g.is_pointwise() {
                inp
            } else {
                im2col(g, inp, &rows, &colsrc, &mut cols);
                &cols
            };
            let out_off = (b * g.cout + grp * g.cout_g) * hw;
            let out_blk = &mut out[out_off..out_off + g.cout_g * hw];
            let mut beta = T::zero();
            if let Some(bias) = bias {
                for (co, row) in out_blk.chunks_mut(hw).enumerate() {
                    row.fill(bias.data()[grp * g.cout_g + co]);
                }
                beta = T::one();
            }
            let w = &kernel.data()[grp * g.cout_g * taps..(grp + 1) * g.cout_g * taps];
            T::gemm(
                g.cout_g,
                taps,
                hw,
                T::one(),
                w,
                (taps as isize, 1),
                cols_ref,
                (hw as isize, 1),
                beta,
                out_blk,
            );
        }
    }
    Tensor::new(&[g.n, g.cout, g.h, g.w], out).expect("conv output shape")
}

fn forward_direct<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let hw = g.hw();
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    for b in 0..g.n {
        for co in 0..g.cout {
            let grp = co / g.cout_g;
            for y in 0..g.h {
                for xo in 0..g.w {
                    let mut acc = bias.map_or(T::zero(), |bb| bb.data()[co]);
                    for ci in 0..g.cin_g {
                        let cin = grp * g.cin_g + ci;
                        for ky in 0..g.kh {
                            let Some(sy) = g.source(y, ky, g.kh, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(sx) = g.source(xo, kx, g.kw, g.w) else {
                                    continue;
                                };
                                let wv = k[((co * g.cin_g + ci) * g.kh + ky) * g.kw + kx];
                                acc += wv * x[(b * g.cin + cin) * hw + sy * g.w + sx];
                            }
                        }
                    }
                    out[(b * g.cout + co) * hw + y * g.w + xo] = acc;
                }
            }
        }
    }
    Tensor::new(&[g.n, g.cout, g.h, g.w], out).expect("conv output shape")
}

/// Gradients of a convolution given the upstream gradient of its output.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) struct ConvNeeds {
    pub input: bool,
    pub kernel: bool,
    pub bias: bool,
}

pub(crate) fn backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeom,
    needs: ConvNeeds,
    algo: ConvAlgorithm,
) -> ConvGrads<T> {
    match algo {
        ConvAlgorithm::Im2col => backward_im2col(input, kernel, grad_out, g, needs),
        ConvAlgorithm::Direct => backward_direct(input, kernel, grad_out, g, needs),
    }
}

fn bias_grad<T: Real>(grad_out: &Tensor<T>, g: &ConvGeom) -> Tensor<T> {
    let hw = g.hw();
    let mut gb = vec![T::zero(); g.cout];
    for b in 0..g.n {
        for (co, acc) in gb.iter_mut().enumerate() {
            let off = (b * g.cout + co) * hw;
            *acc += grad_out.data()[off..off + hw].iter().copied().sum::<T>();
        }
    }
    Tensor::new(&[g.cout], gb).expect("bias grad")
}

fn backward_im2col<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeom,
    needs: ConvNeeds,
) -> ConvGrads<T> {
    let hw = g.hw();
    let taps = g.taps();
    let rows = g.source_table(g.kh, g.h);
    let colsrc = g.source_table(g.kw, g.w);
    let mut gk = needs.kernel.then(|| vec![T::zero(); kernel.len()]);
    let mut gi = needs.input.then(|| vec![T::zero(); input.len()]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); taps * hw]
    };
    let mut gcols = if g.is_pointwise() || gi.is_none() {
        Vec::new()
    } else {
        vec![T::zero(); taps * hw]
    };
    for b in 0..g.n {
        for grp in 0..g.groups {
            let in_off = (b * g.cin + grp * g.cin_g) * hw;
            let out_off = (b * g.cout + grp * g.cout_g) * hw;
            let go = &grad_out.data()[out_off..out_off + g.cout_g * hw];
            let w_range = grp * g.cout_g * taps..(grp + 1) * g.cout_g * taps;
            if let Some(gk) = gk.as_mut() {
                let inp = &input.data()[in_off..in_off + g.cin_g * hw];
                let cols_ref: &[T] = if g.is_pointwise() {
                    inp
                } else {
                    im2col(g, inp, &rows, &colsrc, &mut cols);
                    &cols
                };
                // dW[co, r] += sum_p go[co, p] * cols[r, p]
                T::gemm(
                    g.cout_g,
                    hw,
                    taps,
                    T::one(),
                    go,
                    (hw as isize, 1),
                    cols_ref,
                    (1, hw as isize),
                    T::one(),
                    &mut gk[w_range.clone()],
                );
            }
            if let Some(gi) = gi.as_mut() {
                let w = &kernel.data()[w_range];
                // dcols[r, p] = sum_co W[co, r] * go[co, p]
                if g.is_pointwise() {
                    T::gemm(
                        taps,
                        g.cout_g,
                        hw,
                        T::one(),
                        w,
                        (1, taps as isize),
                        go,
                        (hw as isize, 1),
                        T::zero(),
                        &mut gi[in_off..in_off + g.cin_g * hw],
                    );
                } else {
                    T::gemm(
                        taps,
                        g.cout_g,
                        hw,
                        T::one(),
                        w,
                        (1, taps as isize),
                        go,
                        (hw as isize, 1),
                        T::zero(),
                        &mut gcols,
                    );
                    col2im_add(g, &gcols, &rows, &colsrc, &mut gi[in_off..in_off + g.cin_g * hw]);
                }
            }
        }
    }
    ConvGrads {
        input: gi.map(|d| Tensor::new(input.shape(), d).expect("input grad")),
        kernel: gk.map(|d| Tensor::new(kernel.shape(), d).expect("kernel grad")),
        bias: needs.bias.then(|| bias_grad(grad_out, g)),
    }
}

fn backward_direct<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    g: &ConvGeom,
    needs: ConvNeeds,
) -> ConvGrads<T> {
    let hw = g.hw();
    let x = input.data();
    let k = kernel.data();
    let go = grad_out.data();
    let mut gk = vec![T::zero(); kernel.len()];
    let mut gi = vec![T::zero(); input.len()];
    for b in 0..g.n {
        for co in 0..g.cout {
            let grp = co / g.cout_g;
            for y in 0..g.h {
                for xo in 0..g.w {
                    let gv = go[(b * g.cout + co) * hw + y * g.w + xo];
                    for ci in 0..g.cin_g {
                        let cin = grp * g.cin_g + ci;
                        for ky in 0..g.kh {
                            let Some(sy) = g.source(y, ky, g.kh, g.h) else {
                                continue;
                            };
                            for kx in 0..g.kw {
                                let Some(sx) = g.source(xo, kx, g.kw, g.w) else {
                                    continue;
                                };
                                let ki = ((co * g.cin_g + ci) * g.kh + ky) * g.kw + kx;
                                let xi = (b * g.cin + cin) * hw + sy * g.w + sx;
                                gk[ki] += gv * x[xi];
                                gi[xi] += gv * k[ki];
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: needs
            .input
            .then(|| Tensor::new(input.shape(), gi).expect("input grad")),
        kernel: needs
            .kernel
            .then(|| Tensor::new(kernel.shape(), gk).expect("kernel grad")),
        bias: needs.bias.then(|| bias_grad(grad_out, g)),
    }
}

/// Stand-alone convolution without graph recording.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    cfg: ConvConfig,
    algo: ConvAlgorithm,
) -> Result<Tensor<T>, AutodiffError> {
    let g = ConvGeom::new(input, kernel, bias, cfg)?;
    Ok(forward(input, kernel, bias, &g, algo))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    fn random(shape: &[usize], seed: &mut u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| lcg(seed)).collect()).unwrap()
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
        let k = Tensor::ones(&[1, 1, 3, 3]);
        for algo in [ConvAlgorithm::Direct, ConvAlgorithm::Im2col] {
            let y = conv2d_forward(&x, &k, None, ConvConfig::default(), algo).unwrap();
            assert_eq!(y.data()[4], 9.0);
            assert_eq!(y.data()[0], 4.0);
            assert_eq!(y.data()[2], 4.0);
            assert_eq!(y.data()[1], 6.0);
        }
    }

    #[test]
    fn even_kernel_and_bad_groups_rejected() {
        let x = Tensor::<f64>::ones(&[1, 3, 4, 4]);
        let k = Tensor::ones(&[1, 3, 2, 2]);
        assert!(conv2d_forward(&x, &k, None, ConvConfig::default(), ConvAlgorithm::Im2col).is_err());
        let k = Tensor::ones(&[2, 1, 3, 3]);
        let cfg = ConvConfig {
            groups: 2,
            ..ConvConfig::default()
        };
        assert!(conv2d_forward(&x, &k, None, cfg, ConvAlgorithm::Im2col).is_err());
        let k = Tensor::ones(&[3, 2, 3, 3]);
        assert!(conv2d_forward(&x, &k, None, ConvConfig::default(), ConvAlgorithm::Im2col).is_err());
    }

    #[test]
    fn direct_and_im2col_agree() {
        let mut seed = 7;
        let cases = [
            (2, 4, 6, 3, 1, Padding::Zeros, 1),
            (1, 4, 4, 5, 2, Padding::Circular, 2),
            (2, 3, 9, 3, 1, Padding::Circular, 3),
            (1, 6, 6, 1, 1, Padding::Zeros, 1),
            (1, 2, 4, 3, 3, Padding::Zeros, 1),
        ];
        for (n, cin, cout, ks, dil, pad, groups) in cases {
            let x = random(&[n, cin, 7, 5], &mut seed);
            let k = random(&[cout, cin / groups, ks, ks], &mut seed);
            let b = random(&[cout], &mut seed);
            let cfg = ConvConfig {
                dilation: dil,
                padding: pad,
                groups,
            };
            let a = conv2d_forward(&x, &k, Some(&b), cfg, ConvAlgorithm::Direct).unwrap();
            let c = conv2d_forward(&x, &k, Some(&b), cfg, ConvAlgorithm::Im2col).unwrap();
            assert!(a.max_abs_diff(&c) < 1e-5);

            let g = ConvGeom::new(&x, &k, Some(&b), cfg).unwrap();
            let go = random(a.shape(), &mut seed);
            let needs = || ConvNeeds {
                input: true,
                kernel: true,
                bias: true,
            };
            let gd = backward(&x, &k, &go, &g, needs(), ConvAlgorithm::Direct);
            let gm = backward(&x, &k, &go, &g, needs(), ConvAlgorithm::Im2col);
            assert!(gd.input.unwrap().max_abs_diff(&gm.input.unwrap()) < 1e-5);
            assert!(gd.kernel.unwrap().max_abs_diff(&gm.kernel.unwrap()) < 1e-5);
        }
    }

    #[test]
    fn circular_wraps_around() {
        // Shift-by-one kernel: output[x] = input[x + 1 mod w].
        let x = Tensor::<f64>::from_f64(&[1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let k = Tensor::from_f64(&[1, 1, 1, 3], &[0.0, 0.0, 1.0]).unwrap();
        let cfg = ConvConfig::with_padding(Padding::Circular);
        let y = conv2d_forward(&x, &k, None, cfg, ConvAlgorithm::Im2col).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 4.0, 1.0]);
        let y = conv2d_forward(&x, &k, None, ConvConfig::default(), ConvAlgorithm::Im2col).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 4.0, 0.0]);
    }
}
