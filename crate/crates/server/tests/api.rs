use std::path::Path;
use std::time::{Duration, Instant};

use nca_client::{Client, ControlAction, CreateSession, PaintPixel, PerturbRequest, RunMode, View};
use nca_core::data::{parse_config, save_checkpoint, Checkpoint, RunConfig};
use nca_core::metrics::eval_sample;
use nca_core::nca::{NcaModel, OutputInit, Record};
use nca_core::rng::stream;
use nca_core::training::{Axis, Side};
use nca_server::{session_rng, AppState, ModelEntry, ServeConfig};

fn write_model(dir: &Path, id: &str, yaml: &str) -> (ModelEntry, RunConfig, NcaModel<f32>) {
    let cfg = parse_config(yaml, &[]).unwrap();
    let (data, _) = cfg.build_dataset().unwrap();
    let spec = cfg.model_spec(cfg.layout(&data));
    let model = NcaModel::init_with(spec, &mut stream(3, "init"), OutputInit::Random).unwrap();
    let mut ck = Checkpoint::from_model(model.clone());
    ck.config = Some(serde_json::to_value(&cfg).unwrap());
    let path = dir.join(format!("{id}.ckpt"));
    save_checkpoint(&ck, &path).unwrap();
    (
        ModelEntry {
            id: id.into(),
            checkpoint: path,
        },
        cfg,
        model,
    )
}

const GROW: &str = "task: {kind: generative, targets: [heart], size: 16}\nmodel: {hidden_channels: 4, update: {hidden: [16]}}\n";
const COND: &str =
    "task: {kind: generative, targets: [heart, ring, diamond], size: 16, conditional: true}\nmodel: {hidden_channels: 4, update: {hidden: [16]}}\n";
const CLASSIFY: &str = "task: {kind: classification, count: 40, holdout: 10, size: 12}\nmodel: {hidden_channels: 4, update: {hidden: [16]}}\ntrain: {loss: pixel_mse}\n";

struct Fixture {
    client: Client,
    grow: (RunConfig, NcaModel<f32>),
    app: AppState,
    _dir: tempfile::TempDir,
}

async fn start() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (g, gcfg, gmodel) = write_model(dir.path(), "grow", GROW);
    let (c, _, _) = write_model(dir.path(), "cond", COND);
    let (k, _, _) = write_model(dir.path(), "classify", CLASSIFY);
    let mut cfg = ServeConfig::new(vec![g, c, k]);
    cfg.idle_timeout_secs = 600;
    let app = AppState::load(cfg).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(nca_server::serve(listener, app.clone()));
    Fixture {
        client: Client::new(&format!("http://{addr}")),
        grow: (gcfg, gmodel),
        app,
        _dir: dir,
    }
}

fn create(model: &str, seed: u64) -> CreateSession {
    CreateSession {
        model_id: model.into(),
        seed: Some(seed),
        ..Default::default()
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn models_and_health() {
    let f = start().await;
    let models = f.client.models().await.unwrap();
    let ids: Vec<_> = models.iter().map(|m| m.id.as_str()).collect();
    assert_eq!(ids, ["grow", "cond", "classify"]);
    assert_eq!(models[1].layout.condition, 3);
    assert_eq!(models[2].task, "classification");
    let h = f.client.health().await.unwrap();
    assert_eq!(h["status"], "ok");
}

#[tokio::test(flavor = "multi_thread")]
async fn create_session_contract() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 1)).await.unwrap();
    assert_eq!(info.layout, f.grow.1.spec.layout);
    assert_eq!((info.height, info.width, info.step_index), (16, 16, 0));
    assert_eq!(info.metric_name.as_deref(), Some("mse"));

    let err = f.client.create_session(&create("nope", 1)).await.unwrap_err();
    assert_eq!(err.status(), Some(404));

    let mut bad = create("cond", 1);
    bad.condition = Some(vec![1.0, 0.0]);
    let err = f.client.create_session(&bad).await.unwrap_err();
    assert_eq!(err.status(), Some(400));
    assert!(err.to_string().contains("d_condition"), "{err}");
}

#[tokio::test(flavor = "multi_thread")]
async fn stepping_matches_offline_rollout() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 77)).await.unwrap();
    let id = &info.session_id;
    for k in [3, 1, 6] {
        f.client.control(id, &ControlAction::Step { k }).await.unwrap();
    }
    let live = f.client.state(id).await.unwrap();
    assert_eq!(live.step_index, 10);

    let (cfg, model) = &f.grow;
    let (data, test) = cfg.build_dataset().unwrap();
    let (s0, _) = eval_sample(&model.spec.layout, &data, test.as_ref(), 0).unwrap();
    let (offline, _) = model.rollout(&s0, 10, &mut session_rng(77), Record::None).unwrap();
    assert_eq!(live.data, offline.grid.data());
    assert_eq!(live.shape, offline.grid.shape());
}

#[tokio::test(flavor = "multi_thread")]
async fn step_streams_one_frame_per_step() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 5)).await.unwrap();
    let id = &info.session_id;
    let mut s = f.client.stream(id, None).await.unwrap();
    let first = s.next_frame().await.unwrap().unwrap();
    assert_eq!(first.header.step_index, 0);
    assert_eq!(first.rgba.len(), 16 * 16 * 4);
    f.client.control(id, &ControlAction::Step { k: 5 }).await.unwrap();
    let mut steps = Vec::new();
    for _ in 0..5 {
        let fr = tokio::time::timeout(Duration::from_secs(5), s.next_frame()).await.unwrap().unwrap().unwrap();
        assert_eq!(fr.rgba.len(), fr.header.width * fr.header.height * 4);
        steps.push(fr.header.step_index);
    }
    assert_eq!(steps, [1, 2, 3, 4, 5]);
    // Paused: nothing more arrives.
    let idle = tokio::time::timeout(Duration::from_millis(400), s.next_frame()).await;
    assert!(idle.is_err(), "unexpected frame while paused");
}

#[tokio::test(flavor = "multi_thread")]
async fn reset_restores_seed_state() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 9)).await.unwrap();
    let id = &info.session_id;
    let initial = f.client.state(id).await.unwrap();
    f.client.control(id, &ControlAction::Step { k: 4 }).await.unwrap();
    assert_ne!(f.client.state(id).await.unwrap().data, initial.data);
    let r = f.client.control(id, &ControlAction::Reset).await.unwrap();
    assert_eq!(r.step_index, 0);
    assert_eq!(r.epoch, 1);
    let after = f.client.state(id).await.unwrap();
    assert_eq!(after.data, initial.data);
}

#[tokio::test(flavor = "multi_thread")]
async fn step_while_running_conflicts() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 2)).await.unwrap();
    let id = &info.session_id;
    let r = f.client.control(id, &ControlAction::Run { rate: 50.0 }).await.unwrap();
    assert_eq!(r.mode, RunMode::Running { rate: 50.0 });
    let err = f.client.control(id, &ControlAction::Step { k: 1 }).await.unwrap_err();
    assert_eq!(err.status(), Some(409));
    let err = f.client.control(id, &ControlAction::Run { rate: -1.0 }).await.unwrap_err();
    assert_eq!(err.status(), Some(400));
    f.client.control(id, &ControlAction::Pause).await.unwrap();
    f.client.control(id, &ControlAction::Step { k: 1 }).await.unwrap();
    let err = f.client.control("missing", &ControlAction::Pause).await.unwrap_err();
    assert_eq!(err.status(), Some(404));
}

#[tokio::test(flavor = "multi_thread")]
async fn free_running_frame_rate() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 4)).await.unwrap();
    let id = &info.session_id;
    let mut s = f.client.stream(id, None).await.unwrap();
    s.next_frame().await.unwrap();
    f.client.control(id, &ControlAction::Run { rate: 20.0 }).await.unwrap();
    let start = Instant::now();
    let mut frames = 0;
    let mut last = 0;
    while start.elapsed() < Duration::from_secs(2) {
        let fr = s.next_frame().await.unwrap().unwrap();
        assert!(fr.header.step_index > last);
        last = fr.header.step_index;
        frames += 1;
    }
    assert!(frames as f64 / start.elapsed().as_secs_f64() >= 15.0, "{frames} frames");
}

#[tokio::test(flavor = "multi_thread")]
async fn perturbations_record_events() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 6)).await.unwrap();
    let id = &info.session_id;
    f.client.control(id, &ControlAction::Step { k: 2 }).await.unwrap();
    let mut s = f.client.stream(id, None).await.unwrap();
    s.next_frame().await.unwrap();

    let d = f.client
        .perturb(id, &PerturbRequest::Damage { cx: 8.0, cy: 8.0, r: 3.0 })
        .await
        .unwrap();
    assert_eq!(d.event.kind, "damage");
    assert_eq!(d.event.step_index, 2);
    assert!(!d.no_op);
    f.client
        .perturb(id, &PerturbRequest::Halfplane { axis: Axis::Vertical, side: Side::First })
        .await
        .unwrap();
    let err = f.client
        .perturb(id, &PerturbRequest::Damage { cx: 1.0, cy: 1.0, r: -2.0 })
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(400));
    let err = f.client.perturb(id, &PerturbRequest::Mutate { class: 0 }).await.unwrap_err();
    assert_eq!(err.status(), Some(400));
    let err = f.client
        .perturb(id, &PerturbRequest::Paint { channel: 0, pixels: vec![] })
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(409));

    f.client.control(id, &ControlAction::Step { k: 1 }).await.unwrap();
    let fr = s.next_frame().await.unwrap().unwrap();
    assert_eq!(fr.header.step_index, 3);
    let kinds: Vec<_> = fr.header.events.iter().map(|e| e.kind.as_str()).collect();
    assert_eq!(kinds, ["damage", "halfplane"]);

    let m = f.client.metrics(id, None).await.unwrap();
    let steps: Vec<_> = m.entries.iter().map(|e| e.step_index).collect();
    assert_eq!(steps, [0, 1, 2, 3]);
    assert_eq!(m.entries[3].events.len(), 2);
    assert!(m.entries.iter().all(|e| e.metric.is_some()));
    let tail = f.client.metrics(id, Some(2)).await.unwrap();
    assert_eq!(tail.entries.len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn mutate_to_current_class_is_flagged() {
    let f = start().await;
    let mut req = create("cond", 1);
    req.condition = Some(vec![0.0, 1.0, 0.0]);
    let info = f.client.create_session(&req).await.unwrap();
    let id = &info.session_id;
    let same = f.client.perturb(id, &PerturbRequest::Mutate { class: 1 }).await.unwrap();
    assert!(same.no_op);
    assert!(same.event.no_op);
    let other = f.client.perturb(id, &PerturbRequest::Mutate { class: 2 }).await.unwrap();
    assert!(!other.no_op);
    let err = f.client.perturb(id, &PerturbRequest::Mutate { class: 3 }).await.unwrap_err();
    assert_eq!(err.status(), Some(400));
    let st = f.client.state(id).await.unwrap();
    let hw = 16 * 16;
    let start = st.layout.condition_start();
    let cond: Vec<f32> = (0..3).map(|k| st.data[(start + k) * hw]).collect();
    assert_eq!(cond, [0.0, 0.0, 1.0]);
}

#[tokio::test(flavor = "multi_thread")]
async fn paint_writes_only_the_addressed_channel() {
    let f = start().await;
    let info = f.client.create_session(&create("classify", 1)).await.unwrap();
    let id = &info.session_id;
    assert_eq!(info.metric_name.as_deref(), Some("per_pixel_accuracy"));
    let before = f.client.state(id).await.unwrap();
    let pixels = vec![
        PaintPixel { x: 1, y: 2, value: 0.75 },
        PaintPixel { x: 5, y: 0, value: 1.0 },
    ];
    let r = f.client.perturb(id, &PerturbRequest::Paint { channel: 0, pixels }).await.unwrap();
    assert_eq!(r.event.kind, "paint");
    let after = f.client.state(id).await.unwrap();
    let w = 12;
    let changed: Vec<usize> = (0..before.data.len()).filter(|&i| before.data[i] != after.data[i]).collect();
    for &i in &changed {
        assert!(i < 12 * 12, "index {i} outside channel 0");
    }
    assert_eq!(after.data[2 * w + 1], 0.75);
    assert_eq!(after.data[5], 1.0);
    let err = f.client
        .perturb(id, &PerturbRequest::Paint { channel: 1, pixels: vec![] })
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(400));
    let err = f.client
        .perturb(id, &PerturbRequest::Paint { channel: 0, pixels: vec![PaintPixel { x: 12, y: 0, value: 1.0 }] })
        .await
        .unwrap_err();
    assert_eq!(err.status(), Some(400));
}

#[tokio::test(flavor = "multi_thread")]
async fn channel_view_streams_grey() {
    let f = start().await;
    let info = f.client.create_session(&create("grow", 8)).await.unwrap();
    let id = &info.session_id;
    let mut s = f.client.stream(id, Some(5)).await.unwrap();
    let fr = s.next_frame().await.unwrap().unwrap();
    assert_eq!(fr.header.view, View::Channel { channel: 5 });
    assert!(fr.rgba.chunks(4).all(|p| p[0] == p[1] && p[1] == p[2] && p[3] == 255));
    s.set_view(View::Rgba).await.unwrap();
    tokio::time::sleep(Duration::from_millis(100)).await;
    f.client.control(id, &ControlAction::Step { k: 1 }).await.unwrap();
    let fr = s.next_frame().await.unwrap().unwrap();
    assert_eq!(fr.header.view, View::Rgba);
}

#[tokio::test(flavor = "multi_thread")]
async fn sessions_are_independent_and_expire() {
    let f = start().await;
    let a = f.client.create_session(&create("grow", 1)).await.unwrap();
    let b = f.client.create_session(&create("grow", 1)).await.unwrap();
    f.client.control(&a.session_id, &ControlAction::Step { k: 4 }).await.unwrap();
    assert_eq!(f.client.state(&b.session_id).await.unwrap().step_index, 0);
    f.client.control(&b.session_id, &ControlAction::Step { k: 4 }).await.unwrap();
    assert_eq!(
        f.client.state(&a.session_id).await.unwrap().data,
        f.client.state(&b.session_id).await.unwrap().data
    );
    assert_eq!(f.app.expire_idle(), 0);
    f.client.delete_session(&a.session_id).await.unwrap();
    assert_eq!(f.client.state(&a.session_id).await.unwrap_err().status(), Some(404));
    assert_eq!(f.app.session_count(), 1);
}
