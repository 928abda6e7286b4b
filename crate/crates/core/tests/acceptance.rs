//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use blinkpipe::dataset::{label_blinks, label_for_offset, split_participants, window_dataset, Recording, SplitSpec};
use blinkpipe::eval::{metrics, random_baseline, ConfusionMatrix};
use blinkpipe::fsm::{transition, BlinkFsm, EventKind, EyePair, Mode, UiPlane, DEFAULT_DEAD_ZONE_RAD};
use blinkpipe::net::layers::{cross_entropy_rows, softmax_rows, BatchNorm, Linear, Mish};
use blinkpipe::net::model::{ResBlock, SubBlock};
use blinkpipe::net::{evaluate, train, BlinkNet, ModelCheckpoint, NetConfig, Parameters, TrainConfig};
use blinkpipe::proto::{decode, encode, run_in_process, stream_frames, ControlCommand, Message, Server, ServerConfig, WarmupPolicy, WireError};
use blinkpipe::sim::{generate_session, replay, ClosureStyle, SimConfig};
use blinkpipe::types::{BlinkLabel, CalibrationProfile, GazeFrame, HeadPose, Vec3, NS_PER_MS, SAMPLE_PERIOD_NS};
use blinkpipe::window::FeatureNormalizer;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

// ---------------------------------------------------------------- FSM table

use EyePair::{BothClosed as CC, BothOpen as OO, LeftClosed as CO, RightClosed as OC};
use Mode::{Default as D, DragEnd as DE, DragStart as DS, DragUpdate as DU, Selection as S};

/// (mode, eyes, head moving, next mode), written out by hand.
const TABLE: [(Mode, EyePair, bool, Mode); 40] = [
    (D, OO, false, D),
    (D, OO, true, D),
    (D, CO, false, D),
    (D, CO, true, DS),
    (D, OC, false, D),
    (D, OC, true, DS),
    (D, CC, false, S),
    (D, CC, true, S),
    (S, OO, false, D),
    (S, OO, true, D),
    (S, CO, false, S),
    (S, CO, true, S),
    (S, OC, false, S),
    (S, OC, true, S),
    (S, CC, false, S),
    (S, CC, true, S),
    (DS, OO, false, DE),
    (DS, OO, true, DE),
    (DS, CO, false, DS),
    (DS, CO, true, DU),
    (DS, OC, false, DS),
    (DS, OC, true, DU),
    (DS, CC, false, DE),
    (DS, CC, true, DE),
    (DU, OO, false, DE),
    (DU, OO, true, DE),
    (DU, CO, false, DU),
    (DU, CO, true, DU),
    (DU, OC, false, DU),
    (DU, OC, true, DU),
    (DU, CC, false, DE),
    (DU, CC, true, DE),
    (DE, OO, false, D),
    (DE, OO, true, D),
    (DE, CO, false, D),
    (DE, CO, true, D),
    (DE, OC, false, D),
    (DE, OC, true, D),
    (DE, CC, false, D),
    (DE, CC, true, D),
];

fn table_next(mode: Mode, eyes: EyePair, moving: bool) -> Mode {
    TABLE
        .iter()
        .find(|(m, e, h, _)| *m == mode && *e == eyes && *h == moving)
        .map(|r| r.3)
        .expect("table is complete")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RefEvent {
    Select,
    Started,
    Delta(f64, f64),
    Ended,
}

/// Naive re-implementation on the in-front plane (normal +z, basis x/y).
struct RefFsm {
    mode: Mode,
    anchor: Option<[f64; 3]>,
    prev: Option<[f64; 3]>,
    d: f64,
}

impl RefFsm {
    fn hit(&self, f: [f64; 3]) -> Option<[f64; 3]> {
        if f[2] <= 1e-9 {
            return None;
        }
        let t = self.d / f[2];
        Some([f[0] * t, f[1] * t, self.d])
    }

    fn step(&mut self, eyes: EyePair, f: [f64; 3], moving: bool) -> Vec<RefEvent> {
        self.prev = Some(f);
        let next = table_next(self.mode, eyes, moving);
        let mut ev = Vec::new();
        match (self.mode, next) {
            (D, S) => ev.push(RefEvent::Select),
            (D, DS) => match self.hit(f) {
                Some(p) => {
                    self.anchor = Some(p);
                    ev.push(RefEvent::Started);
                }
                None => return ev,
            },
            (DS | DU, DU) if moving => {
                if let Some(p) = self.hit(f) {
                    let a = self.anchor.unwrap();
                    ev.push(RefEvent::Delta(p[0] - a[0], p[1] - a[1]));
                    self.anchor = Some(p);
                }
            }
            (DS | DU, DE) => {
                self.anchor = None;
                ev.push(RefEvent::Ended);
            }
            (_, D) => self.anchor = None,
            _ => {}
        }
        self.mode = next;
        ev
    }
}

fn to_ref(kind: EventKind) -> RefEvent {
    match kind {
        EventKind::Select(_) => RefEvent::Select,
        EventKind::DragStarted(_) => RefEvent::Started,
        EventKind::DragDelta([x, y]) => RefEvent::Delta(x, y),
        EventKind::DragEnded => RefEvent::Ended,
    }
}

fn fsm_oracle_equivalence() -> Outcome {
    let mut divergences = 0;
    for mode in Mode::ALL {
        for eyes in EyePair::ALL {
            for moving in [false, true] {
                if transition(mode, eyes, moving) != table_next(mode, eyes, moving) {
                    divergences += 1;
                }
            }
        }
    }
    ensure!(divergences == 0, "{divergences} table divergences");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut event_count = 0usize;
    for trace in 0..10_000 {
        let d = rng.random_range(0.5..5.0);
        let plane = UiPlane::in_front(d).unwrap();
        let mut fsm = BlinkFsm::default();
        let mut reference = RefFsm {
            mode: D,
            anchor: None,
            prev: None,
            d,
        };
        let (mut yaw, mut pitch) = (rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3));
        let steps = rng.random_range(5..40);
        for k in 0..steps {
            // either no motion or clearly above the dead zone
            let moving = k > 0 && rng.random_bool(0.6);
            if moving {
                let step = rng.random_range(1.0f64..5.0).to_radians();
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                yaw += step * theta.cos();
                pitch = (pitch + step * theta.sin()).clamp(-1.2, 1.2);
                if rng.random_bool(0.02) {
                    yaw += std::f64::consts::PI;
                }
            }
            let eyes = EyePair::ALL[rng.random_range(0..4)];
            let head = HeadPose::from_yaw_pitch(k as i64, Vec3::ZERO, yaw, pitch);
            let f = [head.forward.x, head.forward.y, head.forward.z];
            let got: Vec<RefEvent> = fsm.step(eyes, &head, &plane, None).events.iter().map(|e| to_ref(e.kind)).collect();
            let moving_ref = reference
                .prev
                .is_some_and(|p| (p[0] * f[0] + p[1] * f[1] + p[2] * f[2]).clamp(-1.0, 1.0).acos() > DEFAULT_DEAD_ZONE_RAD);
            let want = reference.step(eyes, f, moving_ref);
            ensure!(got.len() == want.len(), "trace {trace} step {k}: {got:?} vs {want:?}");
            for (g, w) in got.iter().zip(&want) {
                let same = match (g, w) {
                    (RefEvent::Delta(a, b), RefEvent::Delta(c, e)) => (a - c).abs() < 1e-9 && (b - e).abs() < 1e-9,
                    _ => g == w,
                };
                ensure!(same, "trace {trace} step {k}: {g:?} vs {w:?}");
            }
            ensure!(fsm.mode() == reference.mode, "trace {trace} step {k}: mode diverged");
            event_count += got.len();
        }
    }
    Ok(format!("40/40 table entries, 10000 traces, {event_count} events identical"))
}

// ---------------------------------------------------------- drag geometry

fn oracle_basis(n: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    // up x n with up = +y, then n x right
    let r = [n[2], 0.0, -n[0]];
    let len = (r[0] * r[0] + r[2] * r[2]).sqrt();
    let r = [r[0] / len, 0.0, r[2] / len];
    let u = [n[1] * r[2] - n[2] * r[1], n[2] * r[0] - n[0] * r[2], n[0] * r[1] - n[1] * r[0]];
    (r, u)
}

fn oracle_hit(p: [f64; 3], f: [f64; 3], o: [f64; 3], n: [f64; 3], d: f64) -> [f64; 3] {
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let height = dot([p[0] - o[0], p[1] - o[1], p[2] - o[2]], n) - d;
    let t = -height / dot(f, n);
    [p[0] + t * f[0], p[1] + t * f[1], p[2] + t * f[2]]
}

fn drag_geometry() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_step = 0.0f64;
    let mut worst_sum = 0.0f64;
    for case in 0..1000 {
        let d = rng.random_range(1.0..6.0);
        let (ny, nx): (f64, f64) = (rng.random_range(-0.3..0.3), rng.random_range(-0.5..0.5));
        let n = Vec3::new(nx.sin() * ny.cos(), -ny.sin(), nx.cos() * ny.cos());
        let o = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0);
        let plane = UiPlane::new(o, n, d).unwrap();
        let pos = Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(1.4..1.8), rng.random_range(-0.3..0.3));
        let (mut yaw, mut pitch) = (rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3));
        let mut fsm = BlinkFsm::default();
        let mut ts = 0;
        let mut pose = |yaw: f64, pitch: f64| {
            ts += SAMPLE_PERIOD_NS;
            HeadPose::from_yaw_pitch(ts, pos, yaw, pitch)
        };
        fsm.step(OO, &pose(yaw, pitch), &plane, None);
        yaw += 1f64.to_radians();
        let start = pose(yaw, pitch);
        let ev = fsm.step(CO, &start, &plane, None).events;
        ensure!(matches!(ev[..], [ref e] if matches!(e.kind, EventKind::DragStarted(_))), "case {case}: no drag start");
        let arr = |v: Vec3| [v.x, v.y, v.z];
        let (na, oa) = (arr(n), arr(o));
        let first = oracle_hit(arr(pos), arr(start.forward), oa, na, d);
        let mut prev = first;
        let mut last = first;
        let mut sum = [0.0, 0.0];
        let (r, u) = oracle_basis(na);
        for _ in 0..rng.random_range(1..8) {
            yaw += rng.random_range(0.6f64..3.0).to_radians() * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            pitch += rng.random_range(-2.0f64..2.0).to_radians();
            let head = pose(yaw, pitch);
            let ev = fsm.step(CO, &head, &plane, None).events;
            let now = oracle_hit(arr(pos), arr(head.forward), oa, na, d);
            let diff = [now[0] - prev[0], now[1] - prev[1], now[2] - prev[2]];
            let want = [
                diff[0] * r[0] + diff[1] * r[1] + diff[2] * r[2],
                diff[0] * u[0] + diff[1] * u[1] + diff[2] * u[2],
            ];
            match ev.first().map(|e| e.kind) {
                Some(EventKind::DragDelta([x, y])) => {
                    worst_step = worst_step.max((x - want[0]).abs()).max((y - want[1]).abs());
                    sum[0] += x;
                    sum[1] += y;
                }
                // sub-threshold rotation: no delta, anchor kept
                None => continue,
                other => return Err(format!("case {case}: unexpected {other:?}")),
            }
            prev = now;
            last = now;
        }
        let net = [last[0] - first[0], last[1] - first[1], last[2] - first[2]];
        let net2 = [
            net[0] * r[0] + net[1] * r[1] + net[2] * r[2],
            net[0] * u[0] + net[1] * u[1] + net[2] * u[2],
        ];
        worst_sum = worst_sum.max((sum[0] - net2[0]).abs()).max((sum[1] - net2[1]).abs());
    }
    ensure!(worst_step < 1e-9, "step error {worst_step:e} m");
    ensure!(worst_sum < 1e-9, "telescoping error {worst_sum:e} m");
    Ok(format!("1000 poses; max step error {worst_step:.1e} m, max sum error {worst_sum:.1e} m"))
}

// ------------------------------------------------------- gradient checks

const H: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-scale..scale))
}

/// Central-difference check of `loss` w.r.t. a flat parameter vector.
fn check_params(
    params: &mut Vec<f64>,
    analytic: &[f64],
    mut loss: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + H;
        let up = loss(params);
        params[i] = orig - H;
        let down = loss(params);
        params[i] = orig;
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

fn check_input(x: &Array2<f64>, analytic: &Array2<f64>, mut loss: impl FnMut(&Array2<f64>) -> f64) -> f64 {
    let mut worst = 0.0f64;
    let mut x = x.clone();
    for idx in 0..x.len() {
        let (i, j) = (idx / x.ncols(), idx % x.ncols());
        let orig = x[[i, j]];
        x[[i, j]] = orig + H;
        let up = loss(&x);
        x[[i, j]] = orig - H;
        let down = loss(&x);
        x[[i, j]] = orig;
        worst = worst.max(rel_err(analytic[[i, j]], (up - down) / (2.0 * H)));
    }
    worst
}

fn weighted_sum(y: &Array2<f64>, r: &Array2<f64>) -> f64 {
    (y * r).sum()
}

fn gradient_correctness() -> Outcome {
    use blinkpipe::net::Mode as M;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut report = Vec::new();
    let (b, fin, fout) = (6, 7, 5);

    // linear
    let x = random_matrix(&mut rng, b, fin, 1.0);
    let r = random_matrix(&mut rng, b, fout, 1.0);
    let mut lin = Linear::init(fin, fout, &mut rng);
    lin.forward(&x);
    let dx = lin.backward(&r, true).map_err(|e| e.to_string())?.unwrap();
    let g = lin.flat_grads();
    let mut p = lin.flat_params();
    let probe = lin.clone();
    let wp = check_params(&mut p, &g, |v| {
        let mut l = probe.clone();
        l.set_flat_params(v);
        weighted_sum(&l.infer(&x), &r)
    });
    let wx = check_input(&x, &dx, |xx| weighted_sum(&probe.infer(xx), &r));
    report.push(("linear", wp.max(wx)));

    // batch norm, train mode
    let x = random_matrix(&mut rng, b, fout, 2.0);
    let mut bn = BatchNorm::new(fout);
    for v in bn.gamma.iter_mut() {
        *v = rng.random_range(0.5..1.5);
    }
    for v in bn.beta.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    bn.forward(&x, M::Train).map_err(|e| e.to_string())?;
    let dx = bn.backward(&r).map_err(|e| e.to_string())?;
    let g = bn.flat_grads();
    let mut p = bn.flat_params();
    let probe = bn.clone();
    let train_out = |layer: &BatchNorm, xx: &Array2<f64>| layer.normalize(xx, M::Train).unwrap().0 * &layer.gamma + &layer.beta;
    let wp = check_params(&mut p, &g, |v| {
        let mut l = probe.clone();
        l.set_flat_params(v);
        weighted_sum(&train_out(&l, &x), &r)
    });
    let wx = check_input(&x, &dx, |xx| weighted_sum(&train_out(&probe, xx), &r));
    report.push(("batchnorm", wp.max(wx)));

    // mish
    let x = random_matrix(&mut rng, b, fout, 4.0);
    let mut act = Mish::default();
    act.forward(x.clone());
    let dx = act.backward(&r).map_err(|e| e.to_string())?;
    let wx = check_input(&x, &dx, |xx| weighted_sum(&Mish::infer(xx), &r));
    report.push(("mish", wx));

    // softmax + cross-entropy
    let logits = random_matrix(&mut rng, b, 2, 3.0);
    let labels: Vec<usize> = (0..b).map(|i| i % 2).collect();
    let probs = softmax_rows(&logits);
    let mut dl = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        dl[[i, y]] -= 1.0;
    }
    dl /= b as f64;
    let mean_ce = |z: &Array2<f64>| cross_entropy_rows(z, &labels).iter().sum::<f64>() / b as f64;
    report.push(("softmax-ce", check_input(&logits, &dl, mean_ce)));

    // residual blocks: identity skip and projection skip
    for (name, fin, fout) in [("resblock-identity", 5, 5), ("resblock-projection", 5, 3)] {
        let x = random_matrix(&mut rng, b, fin, 1.5);
        let r = random_matrix(&mut rng, b, fout, 1.0);
        let first = SubBlock::new(Linear::init(fin, fout, &mut rng), BatchNorm::new(fout));
        let second = SubBlock::new(Linear::init(fout, fout, &mut rng), BatchNorm::new(fout));
        let skip = (fin != fout).then(|| Linear::init(fin, fout, &mut rng));
        let mut block = ResBlock::new(first, second, skip).map_err(|e| e.to_string())?;
        block.forward(&x, M::Train).map_err(|e| e.to_string())?;
        let dx = block.backward(&r).map_err(|e| e.to_string())?;
        let g = block.flat_grads();
        let mut p = block.flat_params();
        let probe = block.clone();
        let out = |blk: &ResBlock, xx: &Array2<f64>| {
            let mut c = blk.clone();
            weighted_sum(&c.forward(xx, M::Train).unwrap(), &r)
        };
        let wp = check_params(&mut p, &g, |v| {
            let mut c = probe.clone();
            c.set_flat_params(v);
            out(&c, &x)
        });
        let wx = check_input(&x, &dx, |xx| out(&probe, xx));
        report.push((name, wp.max(wx)));
    }

    // miniature network: input 40, two blocks
    let cfg = NetConfig {
        input_dim: 40,
        stem_width: 12,
        block_widths: vec![12, 6],
    };
    let mut net = BlinkNet::new(&cfg, 4);
    let x = random_matrix(&mut rng, 8, 40, 1.0);
    let labels: Vec<usize> = (0..8).map(|i| (i * 7 % 3) % 2).collect();
    net.forward(&x, M::Train).map_err(|e| e.to_string())?;
    net.backward(&labels).map_err(|e| e.to_string())?;
    let g = net.flat_grads();
    let mut p = net.flat_params();
    let probe = net.clone();
    let wp = check_params(&mut p, &g, |v| {
        let mut c = probe.clone();
        c.set_flat_params(v);
        c.forward(&x, M::Train).unwrap();
        c.loss(&labels).unwrap()
    });
    report.push(("mini-net", wp));

    let worst = report.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail = report
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure!(worst < 1e-4, "max relative error {worst:e} ({detail})");
    Ok(format!("max relative error {worst:.1e} ({detail})"))
}

// -------------------------------------------------- normalization invariants

fn normalization_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_sum = 0.0f64;
    let logits = Array2::from_shape_fn((10_000, 2), |_| {
        let scale = [1.0, 30.0, 800.0][rng.random_range(0..3)];
        rng.random_range(-scale..scale)
    });
    for row in softmax_rows(&logits).rows() {
        worst_sum = worst_sum.max((row.sum() - 1.0).abs());
    }
    ensure!(worst_sum <= 1e-6, "softmax row sum off by {worst_sum:e}");

    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for trial in 0..20 {
        let (b, f) = (32 + trial, 16);
        let mut bn = BatchNorm::new(f);
        let scales: Vec<f64> = (0..f).map(|_| rng.random_range(1.0..20.0)).collect();
        let shifts: Vec<f64> = (0..f).map(|_| rng.random_range(-50.0..50.0)).collect();
        let mut x = Array2::from_shape_fn((b, f), |(_, j)| shifts[j] + scales[j] * rng.random_range(-1.0..1.0));
        // guarantee a batch variance of at least one per feature
        for j in 0..f {
            let col = x.column(j).to_owned();
            let m = col.mean().unwrap();
            let v = col.mapv(|c| (c - m).powi(2)).mean().unwrap();
            if v < 1.0 {
                let k = (1.0 / v).sqrt();
                x.column_mut(j).mapv_inplace(|c| m + (c - m) * k);
            }
        }
        let y = bn.forward(&x, blinkpipe::net::Mode::Train).map_err(|e| e.to_string())?;
        for col in y.columns() {
            let m = col.mean().unwrap();
            let v = col.mapv(|c| (c - m).powi(2)).mean().unwrap();
            worst_mean = worst_mean.max(m.abs());
            worst_var = worst_var.max((v - 1.0).abs());
        }
    }
    ensure!(worst_mean < 1e-5, "batch-norm mean {worst_mean:e}");
    ensure!(worst_var < 1e-4, "batch-norm variance off by {worst_var:e}");
    Ok(format!(
        "softmax |sum-1| <= {worst_sum:.1e}; batch-norm |mean| <= {worst_mean:.1e}, |var-1| <= {worst_var:.1e}"
    ))
}

// --------------------------------------------------------- learnability

fn corpus(participants: usize, minutes: f64, seed: u64) -> Vec<Recording> {
    (0..participants)
        .map(|p| {
            let cfg = SimConfig {
                seed: seed * 1000 + p as u64,
                participant_id: format!("P{p:02}"),
                duration_s: minutes * 60.0,
                ..SimConfig::default()
            };
            generate_session(&cfg).unwrap().0
        })
        .collect()
}

fn learnability() -> Outcome {
    let t0 = Instant::now();
    let window = 500;
    let recs = corpus(20, 4.0, 21);
    let ids: Vec<String> = recs.iter().map(|r| r.participant_id.clone()).collect();
    let split = split_participants(&ids, &SplitSpec::default(), 21).map_err(|e| e.to_string())?;
    let pick = |names: &[String]| recs.iter().filter(|r| names.contains(&r.participant_id)).collect::<Vec<_>>();
    let profile = CalibrationProfile::default();
    let (tr, _) = window_dataset(&pick(&split.train), profile, window).map_err(|e| e.to_string())?;
    let (va, _) = window_dataset(&pick(&split.val), profile, window).map_err(|e| e.to_string())?;
    let (te, _) = window_dataset(&pick(&split.test), profile, window).map_err(|e| e.to_string())?;
    let total = tr.len() + va.len() + te.len();
    ensure!(total >= 2000, "only {total} labeled blinks");

    let mut net = BlinkNet::new(&NetConfig::for_window(window), 21);
    net.normalizer = Some(FeatureNormalizer::fit(tr.streams().iter().flatten()));
    let cfg = TrainConfig {
        epochs: 50,
        seed: 21,
        ..TrainConfig::default()
    };
    ensure!(cfg.adam.lr == 1e-4, "learning rate {}", cfg.adam.lr);
    let outcome = train(net, &tr, &va, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let test = evaluate(&outcome.best.net, &te).map_err(|e| e.to_string())?;
    let baseline = random_baseline(&te.labels(), 21, 10_000);
    let margin = (test.accuracy - baseline.accuracy) / baseline.accuracy_std;
    let train_min = t0.elapsed().as_secs_f64() / 60.0;

    // full-size input: one epoch, then the usual invariants
    let full = corpus(3, 1.0, 22);
    let refs: Vec<&Recording> = full.iter().collect();
    let (ftr, _) = window_dataset(&refs[..2], profile, 5000).map_err(|e| e.to_string())?;
    let (fva, _) = window_dataset(&refs[2..], profile, 5000).map_err(|e| e.to_string())?;
    let mut big = BlinkNet::new(&NetConfig::default(), 22);
    ensure!(big.input_dim() == 50_000, "input dim {}", big.input_dim());
    big.normalizer = Some(FeatureNormalizer::fit(ftr.streams().iter().flatten()));
    let big_cfg = TrainConfig {
        epochs: 1,
        seed: 22,
        ..TrainConfig::default()
    };
    let big_out = train(big, &ftr, &fva, &big_cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let rec = big_out.history[0];
    ensure!(rec.train_loss.is_finite() && rec.val_loss.is_finite(), "non-finite loss {rec:?}");
    let probs = big_out.last.predict(&fva.batch(&(0..fva.len()).collect::<Vec<_>>(), None)).map_err(|e| e.to_string())?;
    ensure!(
        probs.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9),
        "full-size probabilities do not sum to 1"
    );
    let bytes = ModelCheckpoint {
        net: big_out.last.clone(),
        epoch: 1,
        validation_loss: rec.val_loss,
    }
    .to_bytes();
    let back = ModelCheckpoint::from_bytes(&bytes).map_err(|e| e.to_string())?;
    ensure!(back.to_bytes() == bytes, "full-size checkpoint does not round-trip");

    ensure!(
        test.accuracy >= 0.90,
        "held-out accuracy {:.3} after {} epochs ({} train / {} val / {} test)",
        test.accuracy,
        outcome.history.len(),
        tr.len(),
        va.len(),
        te.len()
    );
    ensure!(margin >= 10.0, "only {margin:.1} sigma above the baseline");
    Ok(format!(
        "accuracy {:.3} on {} held-out blinks (best epoch {}, {} blinks total), baseline {:.3} +- {:.3} ({margin:.0} sigma), {train_min:.1} min; full-size epoch loss {:.4}",
        test.accuracy,
        te.len(),
        outcome.best.epoch,
        total,
        baseline.accuracy,
        baseline.accuracy_std,
        rec.train_loss
    ))
}

// ------------------------------------------------------------- metrics

fn metrics_fixture() -> Outcome {
    let cases = [
        ((7, 3, 3, 7), [0.7, 0.7, 0.7, 0.7]),
        ((10, 0, 0, 0), [1.0, 1.0, 1.0, 1.0]),
        // acc 7/10, precision 3/4, recall 3/5, f1 2/3
        ((3, 1, 2, 4), [0.7, 0.6, 0.75, 2.0 / 3.0]),
        // acc 11/20, precision 4/9, recall 4/8, f1 8/17
        ((4, 5, 4, 7), [0.55, 0.5, 4.0 / 9.0, 8.0 / 17.0]),
    ];
    for ((tp, fp, fn_, tn), [acc, rec, prec, f1]) in cases {
        let m = metrics(&ConfusionMatrix::new(tp, fp, fn_, tn)).map_err(|e| e.to_string())?;
        for (got, want, name) in [(m.accuracy, acc, "accuracy"), (m.recall, rec, "recall"), (m.precision, prec, "precision"), (m.f1, f1, "f1")] {
            ensure!((got - want).abs() <= 1e-12, "({tp},{fp},{fn_},{tn}) {name} {got} != {want}");
        }
    }
    let op = metrics(&ConfusionMatrix::new(70, 33, 30, 130)).map_err(|e| e.to_string())?;
    ensure!((op.accuracy - 0.76).abs() <= 0.005, "operating-point accuracy {}", op.accuracy);
    Ok(format!(
        "4 hand matrices exact to 1e-12; operating point acc {:.4} rec {:.3} prec {:.3} f1 {:.3}",
        op.accuracy, op.recall, op.precision, op.f1
    ))
}

// ------------------------------------------------------------- labeling

fn labeling_rule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut rec = Recording::new("L");
    let n = 1000;
    let spacing = 2_000 * NS_PER_MS;
    let total = (n as i64 + 1) * spacing;
    let mut presses = Vec::new();
    for i in 0..total / SAMPLE_PERIOD_NS {
        let t = i * SAMPLE_PERIOD_NS;
        let phase = t % spacing;
        let closed = t >= spacing && (1_000 * NS_PER_MS..1_120 * NS_PER_MS).contains(&phase);
        let o = if closed { 0.1 } else { 1.0 };
        rec.frames.push(GazeFrame::open_forward(t).with_openness(o, o));
    }
    for k in 1..=n as i64 {
        let offset = k * spacing + 1_120 * NS_PER_MS;
        presses.push(offset + rng.random_range(-400 * NS_PER_MS..=400 * NS_PER_MS));
    }
    presses.sort_unstable();
    rec.button_presses = presses.clone();
    let labeled = label_blinks(&rec, CalibrationProfile::default()).map_err(|e| e.to_string())?;
    ensure!(labeled.len() == n, "segmented {} blinks, expected {n}", labeled.len());
    let mut voluntary = 0;
    for b in &labeled {
        let oracle = presses.iter().any(|&p| (p - b.blink.offset_ns).abs() <= 200 * NS_PER_MS);
        ensure!((b.label == BlinkLabel::Voluntary) == oracle, "blink at {} mislabeled", b.blink.offset_ns);
        ensure!(label_for_offset(b.blink.offset_ns, &presses) == b.label, "rule disagrees at {}", b.blink.offset_ns);
        voluntary += oracle as usize;
    }
    Ok(format!("{n} pairs match the interval oracle ({voluntary} voluntary)"))
}

// ------------------------------------------------ transport transparency

fn transport_transparency() -> Outcome {
    let cfg = SimConfig {
        seed: 8,
        duration_s: 300.0,
        ..SimConfig::default()
    };
    let (rec, _) = generate_session(&cfg).map_err(|e| e.to_string())?;
    let net = Arc::new(BlinkNet::new(&NetConfig::default(), 8));
    let local = run_in_process(Arc::clone(&net), WarmupPolicy::Voluntary, CalibrationProfile::default(), rec.frames.iter().copied())
        .map_err(|e| e.to_string())?;

    let server_cfg = ServerConfig {
        listen: "127.0.0.1:0".parse().unwrap(),
        ..ServerConfig::default()
    };
    let handle = Server::bind(server_cfg, net).map_err(|e| e.to_string())?.spawn().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let got = stream_frames(handle.local_addr(), replay(&rec, 20.0)).map_err(|e| e.to_string())?;
    let wall = t0.elapsed().as_secs_f64();
    let stats = handle.stats();
    handle.shutdown();

    let key = |label: BlinkLabel, end: i64, conf: f64| (end, label, conf as f32);
    let wire: Vec<_> = got.iter().map(|r| key(r.prediction.label, r.prediction.blink_end_ns, r.prediction.confidence)).collect();
    let direct: Vec<_> = local.iter().map(|p| key(p.label, p.blink_end_ns, p.confidence)).collect();
    let accepted = stats.accepted_fraction();
    ensure!(stats.frames_received as usize == rec.frames.len(), "server saw {} of {} frames", stats.frames_received, rec.frames.len());
    ensure!(accepted >= 0.999, "only {:.4} of frames accepted", accepted);
    ensure!(wire == direct, "prediction sequences differ ({} over TCP, {} in-process)", wire.len(), direct.len());
    Ok(format!(
        "{} predictions identical; {} frames at {:.0} Hz, {:.2}% accepted, max queue depth {}",
        wire.len(),
        stats.frames_received,
        rec.frames.len() as f64 / wall,
        accepted * 100.0,
        stats.max_queue_depth
    ))
}

// ----------------------------------------------------------- wire format

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    match rng.random_range(0..3) {
        0 => Message::Gaze {
            timestamp_ns: rng.random(),
            features: std::array::from_fn(|_| f32::from_bits(rng.random())),
        },
        1 => Message::Prediction {
            timestamp_ns: rng.random(),
            blink_end_ns: rng.random(),
            class: rng.random_range(0..2),
            confidence: f32::from_bits(rng.random()),
        },
        _ => Message::Control {
            timestamp_ns: rng.random(),
            command: if rng.random() { ControlCommand::Bye } else { ControlCommand::Hello },
        },
    }
}

fn wire_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut fuzzed = 0usize;
    for i in 0..100_000 {
        let msg = random_message(&mut rng);
        let bytes = encode(&msg);
        let (back, used) = decode(&bytes).map_err(|e| format!("message {i}: {e}"))?;
        ensure!(used == bytes.len() && encode(&back) == bytes, "message {i} does not round-trip");

        let cut = rng.random_range(0..bytes.len());
        let r = catch_unwind(|| decode(&bytes[..cut]));
        ensure!(
            matches!(r, Ok(Err(WireError::TruncatedMessage { .. }))),
            "truncation to {cut} bytes gave {r:?}"
        );
        let mut bad = bytes.clone();
        for _ in 0..rng.random_range(1..4) {
            let at = rng.random_range(0..bad.len());
            bad[at] ^= 1 << rng.random_range(0..8);
        }
        let r = catch_unwind(|| decode(&bad));
        ensure!(r.is_ok(), "corrupted message panicked");
        fuzzed += 2;
    }
    for len in 0..200 {
        let junk: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        let r = catch_unwind(|| decode(&junk));
        ensure!(r.is_ok(), "random bytes panicked");
        fuzzed += 1;
    }
    Ok(format!("100000 messages round-trip byte-exact; {fuzzed} fuzzed inputs gave typed results"))
}

// ---------------------------------------------------------- simulator

fn simulator_statistics() -> Outcome {
    let mut rates = Vec::new();
    let (mut dmin, mut dmax) = (f64::MAX, f64::MIN);
    for seed in 0..10 {
        let cfg = SimConfig {
            seed,
            duration_s: 600.0,
            ..SimConfig::default()
        };
        let (_, ledger) = generate_session(&cfg).map_err(|e| e.to_string())?;
        let spont: Vec<_> = ledger.entries.iter().filter(|e| e.style == ClosureStyle::Spontaneous).collect();
        rates.push(spont.len() as f64 / 10.0);
        for e in spont {
            let d = e.blink.duration_ns() as f64 / NS_PER_MS as f64;
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    ensure!((13.0..=21.0).contains(&mean), "mean spontaneous rate {mean:.2}/min");
    ensure!(dmin >= 90.0 && dmax <= 165.0, "durations span [{dmin}, {dmax}] ms");
    Ok(format!("mean spontaneous rate {mean:.2}/min over 10 x 10 min; durations in [{dmin:.0}, {dmax:.0}] ms"))
}

// ---------------------------------------------------------- determinism

fn pipeline(seed: u64) -> Result<(Vec<Vec<u8>>, f64, f64, f64), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let recs = corpus(4, 1.5, seed);
    let mut bytes = Vec::new();
    for r in &recs {
        let p = r.write_to_dir(dir.path()).map_err(|e| e.to_string())?;
        bytes.push(std::fs::read(p).map_err(|e| e.to_string())?);
    }
    let recs = blinkpipe::dataset::read_dir(dir.path()).map_err(|e| e.to_string())?;
    let ids: Vec<String> = recs.iter().map(|r| r.participant_id.clone()).collect();
    let split = split_participants(&ids, &SplitSpec::default(), seed).map_err(|e| e.to_string())?;
    let pick = |names: &[String]| recs.iter().filter(|r| names.contains(&r.participant_id)).collect::<Vec<_>>();
    let profile = CalibrationProfile::default();
    let (tr, _) = window_dataset(&pick(&split.train), profile, 300).map_err(|e| e.to_string())?;
    let (va, _) = window_dataset(&pick(&split.val), profile, 300).map_err(|e| e.to_string())?;
    let (te, _) = window_dataset(&pick(&split.test), profile, 300).map_err(|e| e.to_string())?;
    let mut net = BlinkNet::new(&NetConfig::for_window(300), seed);
    net.normalizer = Some(FeatureNormalizer::fit(tr.streams().iter().flatten()));
    let cfg = TrainConfig {
        epochs: 5,
        seed,
        ..TrainConfig::default()
    };
    let out = train(net, &tr, &va, &cfg, |_, _| {}).map_err(|e| e.to_string())?;
    let last = out.history.last().unwrap();
    let test = evaluate(&out.best.net, &te).map_err(|e| e.to_string())?;
    Ok((bytes, last.train_loss, last.val_loss, test.loss))
}

fn determinism() -> Outcome {
    let a = pipeline(31)?;
    let b = pipeline(31)?;
    ensure!(a.0 == b.0, "recordings differ between runs");
    for (x, y, name) in [(a.1, b.1, "train"), (a.2, b.2, "validation"), (a.3, b.3, "test")] {
        ensure!((x - y).abs() <= 1e-12, "{name} loss {x} vs {y}");
    }
    Ok(format!(
        "recordings byte-identical; final train/val/test losses {:.6}/{:.6}/{:.6} reproduced",
        a.1, a.2, a.3
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("fsm oracle equivalence", fsm_oracle_equivalence),
        ("drag geometry", drag_geometry),
        ("gradient correctness", gradient_correctness),
        ("normalization invariants", normalization_invariants),
        ("learnability", learnability),
        ("metrics fixture", metrics_fixture),
        ("labeling rule", labeling_rule),
        ("transport transparency", transport_transparency),
        ("wire format", wire_format),
        ("simulator statistics", simulator_statistics),
        ("determinism", determinism),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.iter().any(|o| name.contains(o.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t0.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.1} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.1} s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
