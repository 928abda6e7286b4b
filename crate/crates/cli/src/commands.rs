use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;

use blinkpipe::dataset::{self, read_dir, split_participants, window_dataset, Recording, SplitSpec};
use blinkpipe::eval::{random_baseline, ConfusionMatrix, EvalReport};
use blinkpipe::fsm::{trace_line, BlinkFsm, EyePair, UiPlane};
use blinkpipe::net::{evaluate, train as fit, AdamConfig, BlinkNet, EpochRecord, ModelCheckpoint, NetConfig, TrainConfig};
use blinkpipe::proto::{
    associate_prediction, run_in_process, stream_frames, Association, ClientBlinks, Prediction, Server,
    ServerConfig, WarmupPolicy,
};
use blinkpipe::segmenter::Segmenter;
use blinkpipe::sim::{self, ClosureStyle, GroundTruthLedger, SimConfig};
use blinkpipe::window::FeatureNormalizer;
use blinkpipe::{BlinkKind, BlinkLabel, CalibrationProfile, FrameValidator, HeadPose, Vec3};

use crate::error::CliError;
use crate::{CalibrateArgs, EvalArgs, FsmTraceArgs, ReplayArgs, ServeArgs, SimulateArgs, StatsArgs, TrainArgs};

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(CliError::io(path.display().to_string()))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_profile(path: Option<&Path>) -> Result<CalibrationProfile, CliError> {
    let Some(path) = path else {
        return Ok(CalibrationProfile::default());
    };
    let text = fs::read_to_string(path).map_err(CliError::io(path.display().to_string()))?;
    let p: CalibrationProfile =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    CalibrationProfile::new(p.closed_threshold_left, p.closed_threshold_right, p.hysteresis_band)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, CliError> {
    ModelCheckpoint::load(path).map_err(|e| match CliError::from(e) {
        CliError::Io { source, .. } => CliError::Io {
            context: path.display().to_string(),
            source,
        },
        other => other,
    })
}

fn warmup(s: &str) -> Result<WarmupPolicy, CliError> {
    WarmupPolicy::parse(s).ok_or_else(|| CliError::Usage(format!("unknown warm-up policy {s:?}")))
}

/// Distinct, reproducible seeds per simulated participant.
fn participant_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64)
}

pub fn simulate(a: &SimulateArgs, seed: u64) -> Result<(), CliError> {
    if !(a.minutes.is_finite() && a.minutes >= 0.0) {
        return Err(CliError::Usage("--minutes must be a non-negative number".into()));
    }
    if a.participants == 0 {
        return Err(CliError::Usage("--participants must be at least 1".into()));
    }
    fs::create_dir_all(&a.out).map_err(CliError::io(a.out.display().to_string()))?;
    for p in 0..a.participants {
        let mut cfg = SimConfig {
            seed: participant_seed(seed, p),
            participant_id: format!("P{p:02}"),
            duration_s: a.minutes * 60.0,
            hard_mode: a.hard,
            ..SimConfig::default()
        };
        if let Some(r) = a.spontaneous_rate {
            cfg.spontaneous_rate_per_min = r;
        }
        if let Some(r) = a.voluntary_rate {
            cfg.voluntary_rate_per_min = r;
        }
        if let Some(r) = a.wink_rate {
            cfg.wink_rate_per_min = r;
        }
        let (rec, ledger) = if a.minutes == 0.0 {
            warn!("--minutes 0: writing an empty recording for {}", cfg.participant_id);
            let mut rec = Recording::new(cfg.participant_id.clone());
            rec.device = "sim".into();
            (rec, GroundTruthLedger::default())
        } else {
            sim::generate_session(&cfg).map_err(|e| CliError::Usage(e.to_string()))?
        };
        rec.write_to_dir(&a.out)?;
        let ledger_path = GroundTruthLedger::path_for(&a.out, &rec.participant_id);
        fs::write(&ledger_path, ledger.to_csv()).map_err(CliError::io(ledger_path.display().to_string()))?;
        println!(
            "{}\tframes={}\tspontaneous={}\tvoluntary={}\twinks={}\tpresses={}",
            rec.participant_id,
            rec.frames.len(),
            ledger.count(ClosureStyle::Spontaneous),
            ledger.count(ClosureStyle::ExtendedHold) + ledger.count(ClosureStyle::FirmBrief),
            ledger.count(ClosureStyle::Wink),
            rec.button_presses.len()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainHistory<'a> {
    lr: f64,
    epochs: u32,
    batch_size: usize,
    window: usize,
    seed: u64,
    augment: bool,
    train_windows: usize,
    val_windows: usize,
    test_windows: usize,
    best_epoch: u32,
    best_val_loss: f64,
    history: &'a [EpochRecord],
}

pub fn train(a: &TrainArgs, seed: u64) -> Result<(), CliError> {
    if a.window == 0 || a.epochs == 0 || a.batch_size < 2 {
        return Err(CliError::Usage(
            "--window and --epochs must be positive and --batch-size at least 2".into(),
        ));
    }
    if !(a.lr.is_finite() && a.lr > 0.0) {
        return Err(CliError::Usage("--lr must be positive".into()));
    }
    let profile = load_profile(a.profile.as_deref())?;
    let recs = read_dir(&a.data)?;
    let ids: Vec<String> = recs.iter().map(|r| r.participant_id.clone()).collect();
    let split = split_participants(&ids, &SplitSpec::default(), seed)?;
    let group = |names: &[String]| -> Vec<&Recording> {
        recs.iter().filter(|r| names.contains(&r.participant_id)).collect()
    };
    let (train_set, _) = window_dataset(&group(&split.train), profile, a.window)?;
    let (val_set, _) = window_dataset(&group(&split.val), profile, a.window)?;
    let (test_set, _) = window_dataset(&group(&split.test), profile, a.window)?;
    info!(
        "windows: train {}, val {}, test {}",
        train_set.len(),
        val_set.len(),
        test_set.len()
    );
    if train_set.len() < 2 || val_set.is_empty() {
        return Err(CliError::Data(format!(
            "not enough labeled blinks with {} samples of history (train {}, val {})",
            a.window,
            train_set.len(),
            val_set.len()
        )));
    }

    let mut net = BlinkNet::new(&NetConfig::for_window(a.window), seed);
    net.normalizer = Some(FeatureNormalizer::fit(train_set.streams().iter().flatten()));
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed,
        augment: !a.no_augment,
    };
    fs::create_dir_all(&a.out).map_err(CliError::io(a.out.display().to_string()))?;
    write_json(&a.out.join("split.json"), &split)?;

    let mut save_error: Option<CliError> = None;
    let outcome = fit(net, &train_set, &val_set, &cfg, |rec, net| {
        if save_error.is_some() || a.save_every == 0 || rec.epoch % a.save_every != 0 {
            return;
        }
        let ckpt = ModelCheckpoint {
            net: net.clone(),
            epoch: rec.epoch,
            validation_loss: rec.val_loss,
        };
        if let Err(e) = ckpt.save(a.out.join(format!("epoch-{:04}.ckpt", rec.epoch))) {
            save_error = Some(e.into());
        }
    })?;
    if let Some(e) = save_error {
        return Err(e);
    }
    outcome.best.save(a.out.join("best.ckpt"))?;
    let last = outcome.history.last().expect("at least one epoch");
    ModelCheckpoint {
        net: outcome.last.clone(),
        epoch: last.epoch,
        validation_loss: last.val_loss,
    }
    .save(a.out.join("last.ckpt"))?;
    let history = TrainHistory {
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        window: a.window,
        seed,
        augment: cfg.augment,
        train_windows: train_set.len(),
        val_windows: val_set.len(),
        test_windows: test_set.len(),
        best_epoch: outcome.best.epoch,
        best_val_loss: outcome.best.validation_loss,
        history: &outcome.history,
    };
    write_json(&a.out.join("history.json"), &history)?;
    println!(
        "best epoch {} val loss {:.6}; final train loss {:.12e}",
        outcome.best.epoch, outcome.best.validation_loss, last.train_loss
    );
    Ok(())
}

pub fn eval(a: &EvalArgs, seed: u64) -> Result<(), CliError> {
    let profile = load_profile(a.profile.as_deref())?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut recs = read_dir(&a.test)?;
    if let Some(split_path) = &a.split {
        let text = fs::read_to_string(split_path).map_err(CliError::io(split_path.display().to_string()))?;
        let split: dataset::ParticipantSplit =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", split_path.display())))?;
        recs.retain(|r| split.test.contains(&r.participant_id));
    }
    let refs: Vec<&Recording> = recs.iter().collect();
    let (data, _) = window_dataset(&refs, profile, ckpt.net.window_len())?;
    let result = evaluate(&ckpt.net, &data)?;
    let labels = data.labels();
    let predicted: Vec<BlinkLabel> = result.predictions.iter().map(|p| p.0).collect();
    let cm = ConfusionMatrix::from_predictions(&predicted, &labels).map_err(|e| CliError::Internal(e.to_string()))?;
    let baseline = random_baseline(&labels, seed, a.baseline_trials);
    let report = EvalReport::new(cm, Some(baseline)).map_err(|e| CliError::Data(e.to_string()))?;
    print_json(&report)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    if a.table {
        eprint!("{}", report.table("Model"));
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<(), CliError> {
    let profile = load_profile(a.profile.as_deref())?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cfg = ServerConfig {
        listen: a.listen,
        queue_capacity: a.queue.max(1),
        warmup: warmup(&a.warmup_policy)?,
        profile,
    };
    let server = Server::bind(cfg, Arc::new(ckpt.net)).map_err(CliError::io(format!("listen {}", a.listen)))?;
    let addr = server.local_addr().map_err(CliError::io("listen"))?;
    eprintln!("listening on {addr}");
    server.run_until(&AtomicBool::new(false));
    Ok(())
}

pub fn replay(a: &ReplayArgs) -> Result<(), CliError> {
    if !(a.speed.is_finite() && a.speed >= 0.0) {
        return Err(CliError::Usage("--speed must be a non-negative number".into()));
    }
    let profile = load_profile(a.profile.as_deref())?;
    let rec = Recording::read(&a.input)?;
    let received: Vec<(Prediction, i64)> = match (&a.connect, &a.checkpoint) {
        (Some(addr), _) => stream_frames(*addr, sim::replay(&rec, a.speed))?
            .into_iter()
            .map(|r| (r.prediction, r.stream_now_ns))
            .collect(),
        (None, Some(path)) => {
            let ckpt = load_checkpoint(path)?;
            let policy = warmup(&a.warmup_policy)?;
            run_in_process(Arc::new(ckpt.net), policy, profile, sim::replay(&rec, a.speed))
                .map_err(|e| CliError::Data(e.to_string()))?
                .into_iter()
                .map(|p| (p, p.blink_end_ns))
                .collect()
        }
        (None, None) => return Err(CliError::Usage("replay needs --connect or --checkpoint".into())),
    };

    let mut client = ClientBlinks::with_capacity(profile, usize::MAX);
    for f in &rec.frames {
        client.observe(*f);
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut accepted = 0;
    for (p, now) in &received {
        let status = match associate_prediction(&client, p, *now) {
            Association::Accept(_) => {
                accepted += 1;
                "accept"
            }
            Association::Stale => "stale",
        };
        writeln!(
            out,
            "{}\t{}\t{:.6}\t{}",
            p.blink_end_ns,
            p.label.as_str(),
            p.confidence as f32,
            status
        )
        .map_err(CliError::io("stdout"))?;
    }
    eprintln!("{} predictions, {accepted} accepted", received.len());
    Ok(())
}

fn read_head_poses(path: &Path) -> Result<Vec<HeadPose>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path.display().to_string()))?;
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("timestamp") {
            continue;
        }
        let bad = || CliError::Data(format!("{}:{}: expected timestamp_ns,yaw_deg,pitch_deg", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad());
        }
        let ts: i64 = f[0].parse().map_err(|_| bad())?;
        let yaw: f64 = f[1].parse().map_err(|_| bad())?;
        let pitch: f64 = f[2].parse().map_err(|_| bad())?;
        poses.push(HeadPose::from_yaw_pitch(ts, Vec3::new(0.0, 0.0, 0.0), yaw.to_radians(), pitch.to_radians()));
    }
    poses.sort_by_key(|p| p.timestamp_ns);
    Ok(poses)
}

pub fn fsm_trace(a: &FsmTraceArgs) -> Result<(), CliError> {
    let profile = load_profile(a.profile.as_deref())?;
    let rec = Recording::read(&a.input)?;
    let poses = match &a.head {
        Some(p) => read_head_poses(p)?,
        None => Vec::new(),
    };
    let plane = UiPlane::in_front(a.distance).map_err(|e| CliError::Usage(e.to_string()))?;
    if !(a.dead_zone_deg.is_finite() && a.dead_zone_deg >= 0.0) {
        return Err(CliError::Usage("--dead-zone-deg must be non-negative".into()));
    }
    let mut fsm = BlinkFsm::new(a.dead_zone_deg.to_radians());
    let mut seg = Segmenter::new(profile);
    let frames = rec.validated()?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut k = 0;
    for f in &frames {
        let ts = f.timestamp_ns();
        seg.update(f);
        while k + 1 < poses.len() && poses[k + 1].timestamp_ns <= ts {
            k += 1;
        }
        let forward = poses.get(k).map_or(Vec3::new(0.0, 0.0, 1.0), |p| p.forward);
        let head = HeadPose::new(ts, Vec3::new(0.0, 0.0, 0.0), forward);
        let step = fsm.step(EyePair::from(seg.state()), &head, &plane, None);
        if let Some(w) = step.warning {
            warn!("{ts}: {w}");
        }
        let lines: Vec<String> = if step.events.is_empty() {
            vec![trace_line(ts, fsm.mode(), None)]
        } else {
            step.events.iter().map(|e| trace_line(ts, fsm.mode(), Some(e))).collect()
        };
        for l in lines {
            writeln!(out, "{l}").map_err(CliError::io("stdout"))?;
        }
    }
    Ok(())
}

/// Linear-interpolated percentile of unsorted data, `q` in [0, 1].
fn percentile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(values[lo] + (values[hi] - values[lo]) * (pos - lo as f64))
}

#[derive(Serialize)]
struct CalibrationReport {
    #[serde(flatten)]
    profile: CalibrationProfile,
    open_p5: [f64; 2],
    closed_p95: [f64; 2],
    open_samples: [usize; 2],
    closed_samples: [usize; 2],
}

/// Threshold per eye = midpoint of the open-state 5th percentile and the
/// closed-state 95th percentile.
pub fn calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let rec = Recording::read(&a.input)?;
    let ledger_path: PathBuf = a.ledger.clone().unwrap_or_else(|| {
        GroundTruthLedger::path_for(a.input.parent().unwrap_or(Path::new(".")), &rec.participant_id)
    });
    let text = fs::read_to_string(&ledger_path).map_err(CliError::io(ledger_path.display().to_string()))?;
    let ledger = GroundTruthLedger::from_csv(&text)
        .ok_or_else(|| CliError::Data(format!("{}: malformed ledger", ledger_path.display())))?;
    let margin = 200 * blinkpipe::types::NS_PER_MS;

    let mut open: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut closed: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut validator = FrameValidator::new();
    for f in &rec.frames {
        let v = validator.validate(*f).map_err(|e| CliError::Data(e.to_string()))?;
        if !v.is_valid() {
            continue;
        }
        let t = v.timestamp_ns();
        let o = [v.frame().left_openness, v.frame().right_openness];
        let inside = ledger
            .entries
            .iter()
            .find(|e| t >= e.blink.onset_ns && t < e.blink.offset_ns);
        match inside {
            Some(e) => {
                let eyes = match e.blink.kind {
                    BlinkKind::BothEyes => [true, true],
                    BlinkKind::LeftWink => [true, false],
                    BlinkKind::RightWink => [false, true],
                };
                for k in 0..2 {
                    if eyes[k] {
                        closed[k].push(o[k]);
                    }
                }
            }
            None => {
                let near = ledger
                    .entries
                    .iter()
                    .any(|e| t >= e.blink.onset_ns - margin && t < e.blink.offset_ns + margin);
                if !near {
                    open[0].push(o[0]);
                    open[1].push(o[1]);
                }
            }
        }
    }
    let counts = |v: &[Vec<f64>; 2]| [v[0].len(), v[1].len()];
    let (open_n, closed_n) = (counts(&open), counts(&closed));
    let mut open_p5 = [0.0; 2];
    let mut closed_p95 = [0.0; 2];
    for k in 0..2 {
        let eye = if k == 0 { "left" } else { "right" };
        open_p5[k] = percentile(&mut open[k], 0.05)
            .ok_or_else(|| CliError::Data(format!("no open-state samples for the {eye} eye")))?;
        closed_p95[k] = percentile(&mut closed[k], 0.95)
            .ok_or_else(|| CliError::Data(format!("no closed-state samples for the {eye} eye")))?;
    }
    let mid = |k: usize| (open_p5[k] + closed_p95[k]) / 2.0;
    let profile = CalibrationProfile::new(mid(0), mid(1), a.band).map_err(|e| CliError::Data(e.to_string()))?;
    let report = CalibrationReport {
        profile,
        open_p5,
        closed_p95,
        open_samples: open_n,
        closed_samples: closed_n,
    };
    print_json(&report)?;
    if let Some(out) = &a.out {
        write_json(out, &profile)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ParticipantStats {
    participant_id: String,
    duration_s: f64,
    blinks: usize,
    voluntary: usize,
    involuntary: usize,
}

#[derive(Serialize)]
struct StatsReport {
    overall: dataset::DatasetStats,
    participants: Vec<ParticipantStats>,
}

pub fn stats(a: &StatsArgs) -> Result<(), CliError> {
    let profile = load_profile(a.profile.as_deref())?;
    let recs = read_dir(&a.data)?;
    let mut all = Vec::new();
    let mut participants = Vec::new();
    let mut total_s = 0.0;
    for rec in &recs {
        let blinks = dataset::label_blinks(rec, profile)?;
        let s = dataset::dataset_stats(&blinks, Some(rec.duration_s()));
        total_s += rec.duration_s();
        participants.push(ParticipantStats {
            participant_id: rec.participant_id.clone(),
            duration_s: rec.duration_s(),
            blinks: s.total,
            voluntary: s.voluntary,
            involuntary: s.involuntary,
        });
        all.extend(blinks);
    }
    print_json(&StatsReport {
        overall: dataset::dataset_stats(&all, Some(total_s)),
        participants,
    })
}
