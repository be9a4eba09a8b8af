use super::{AutodiffError, Graph, OpKind, Tensor, Var};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub worst_index: usize,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_pair: (f64, f64),
    pub coordinates: usize,
}

/// `|a - n| / (max(|a|, |n|, floor) + 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()).max(floor) + 1e-12)
}

/// Central differences carry roundoff of order `ε·|f| / eps` whatever the
/// coordinate, so coordinates far below the tensor's largest gradient are
/// judged against a fraction of that largest gradient.
pub const FLOOR_FRACTION: f64 = 1e-3;

fn evaluate<F>(f: &F, params: &[Tensor<f64>], fault: Option<OpKind>) -> Result<f64, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut g = Graph::new().with_fault(fault);
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let v = g.value(loss);
    if !v.is_scalar() {
        return Err(AutodiffError::NotScalar(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Checks the analytic gradient of the scalar built by `f` against central
/// differences with step `eps` on every parameter coordinate.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], eps: f64) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    grad_check_with_fault(f, params, eps, None)
}

/// [`grad_check`] with a deliberately corrupted backward rule, for
/// negative-control runs.
pub fn grad_check_with_fault<F>(
    f: F,
    params: &[Tensor<f64>],
    eps: f64,
    fault: Option<OpKind>,
) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let first = evaluate(&f, params, None)?;
    let second = evaluate(&f, params, None)?;
    if first.to_bits() != second.to_bits() {
        return Err(AutodiffError::NonDeterministic { first, second });
    }

    let mut g = Graph::new().with_fault(fault);
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: 0,
        worst_index: 0,
        worst_pair: (0.0, 0.0),
        coordinates: 0,
    };
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let floor = FLOOR_FRACTION * analytic[pi].data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..p.len() {
            let orig = p.data()[i];
            work[pi].data_mut()[i] = orig + eps;
            let plus = evaluate(&f, &work, None)?;
            work[pi].data_mut()[i] = orig - eps;
            let minus = evaluate(&f, &work, None)?;
            work[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[pi].data()[i], numeric, floor);
            report.coordinates += 1;
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = pi;
                report.worst_index = i;
                report.worst_pair = (analytic[pi].data()[i], numeric);
            }
        }
    }
    Ok(report)
}
