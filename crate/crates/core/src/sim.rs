//! Synthetic gaze sessions with a ground-truth ledger.
//!
//! Closures are scheduled as merged Poisson processes (spontaneous blinks,
//! voluntary blinks, winks) and rendered at 200 Hz as smooth openness dips.
//! Voluntary blinks get a button press near their offset so that the press
//! labeling rule reconstructs the ledger.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Recording;
use crate::types::{BlinkEvent, BlinkKind, BlinkLabel, GazeFrame, Vec3, NS_PER_MS, NS_PER_S, SAMPLE_PERIOD_NS};

/// Openness threshold the ledger uses to mark closure intervals.
pub const LEDGER_THRESHOLD: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosureStyle {
    Spontaneous,
    ExtendedHold,
    FirmBrief,
    Wink,
}

impl ClosureStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            ClosureStyle::Spontaneous => "spontaneous",
            ClosureStyle::ExtendedHold => "extended_hold",
            ClosureStyle::FirmBrief => "firm_brief",
            ClosureStyle::Wink => "wink",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spontaneous" => Some(ClosureStyle::Spontaneous),
            "extended_hold" => Some(ClosureStyle::ExtendedHold),
            "firm_brief" => Some(ClosureStyle::FirmBrief),
            "wink" => Some(ClosureStyle::Wink),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub participant_id: String,
    pub duration_s: f64,
    pub spontaneous_rate_per_min: f64,
    /// Below-threshold duration range of spontaneous blinks.
    pub spontaneous_duration_ms: (f64, f64),
    /// Minimum openness reached by spontaneous blinks.
    pub spontaneous_depth: (f64, f64),
    pub voluntary_rate_per_min: f64,
    /// Relative weights of (ExtendedHold, FirmBrief).
    pub voluntary_mix: (f64, f64),
    pub extended_hold_plateau_ms: (f64, f64),
    pub firm_brief_duration_ms: (f64, f64),
    pub wink_rate_per_min: f64,
    pub wink_plateau_ms: (f64, f64),
    /// Minimum gap between the end of one closure and the start of the next.
    pub min_gap_ms: f64,
    /// Press delay relative to a voluntary blink offset, uniform in +-this.
    pub press_jitter_ms: f64,
    pub fixation_ms: (f64, f64),
    pub saccade_ms: (f64, f64),
    pub saccade_max_deg: f64,
    pub openness_noise: f64,
    pub pupil_noise_mm: f64,
    pub direction_noise_rad: f64,
    /// Probability of a frame being flagged invalid by the tracker.
    pub dropout_prob: f64,
    /// Make voluntary blinks look much more like spontaneous ones.
    pub hard_mode: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            participant_id: "P00".into(),
            duration_s: 600.0,
            spontaneous_rate_per_min: 17.0,
            spontaneous_duration_ms: (100.0, 150.0),
            spontaneous_depth: (0.1, 0.4),
            voluntary_rate_per_min: 15.0,
            voluntary_mix: (0.5, 0.5),
            extended_hold_plateau_ms: (300.0, 600.0),
            firm_brief_duration_ms: (120.0, 180.0),
            wink_rate_per_min: 2.0,
            wink_plateau_ms: (200.0, 500.0),
            min_gap_ms: 450.0,
            press_jitter_ms: 150.0,
            fixation_ms: (200.0, 600.0),
            saccade_ms: (30.0, 60.0),
            saccade_max_deg: 15.0,
            openness_noise: 0.01,
            pupil_noise_mm: 0.02,
            direction_noise_rad: 0.002,
            dropout_prob: 0.0,
            hard_mode: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        let range_ok = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a > 0.0 && a <= b;
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive");
        }
        for r in [
            self.spontaneous_rate_per_min,
            self.voluntary_rate_per_min,
            self.wink_rate_per_min,
        ] {
            if !(r.is_finite() && r >= 0.0) {
                return bad("rates must be non-negative");
            }
        }
        for r in [
            self.spontaneous_duration_ms,
            self.extended_hold_plateau_ms,
            self.firm_brief_duration_ms,
            self.wink_plateau_ms,
            self.fixation_ms,
            self.saccade_ms,
        ] {
            if !range_ok(r) {
                return bad("duration ranges must be positive and ordered");
            }
        }
        let (d0, d1) = self.spontaneous_depth;
        if !(0.0..LEDGER_THRESHOLD).contains(&d0) || !(d0..LEDGER_THRESHOLD).contains(&d1) {
            return bad("spontaneous_depth must lie in [0, 0.7)");
        }
        let (w0, w1) = self.voluntary_mix;
        if !(w0 >= 0.0 && w1 >= 0.0 && w0 + w1 > 0.0) {
            return bad("voluntary_mix weights must be non-negative and not both zero");
        }
        if self.press_jitter_ms < 0.0 || self.min_gap_ms < 0.0 {
            return bad("press_jitter_ms and min_gap_ms must be non-negative");
        }
        for s in [self.openness_noise, self.pupil_noise_mm, self.direction_noise_rad] {
            if !(s.is_finite() && s >= 0.0) {
                return bad("noise amplitudes must be non-negative");
            }
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return bad("dropout_prob must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub blink: BlinkEvent,
    pub label: BlinkLabel,
    pub style: ClosureStyle,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLedger {
    pub entries: Vec<LedgerEntry>,
    pub presses: Vec<i64>,
}

impl GroundTruthLedger {
    pub fn count(&self, style: ClosureStyle) -> usize {
        self.entries.iter().filter(|e| e.style == style).count()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("onset_ns,offset_ns,kind,label,style,min_left,min_right\n");
        for e in &self.entries {
            let b = &e.blink;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                b.onset_ns,
                b.offset_ns,
                b.kind.as_str(),
                e.label.as_str(),
                e.style.as_str(),
                b.min_openness_left,
                b.min_openness_right
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Option<Self> {
        let mut entries = Vec::new();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return None;
            }
            entries.push(LedgerEntry {
                blink: BlinkEvent {
                    onset_ns: f[0].parse().ok()?,
                    offset_ns: f[1].parse().ok()?,
                    kind: BlinkKind::parse(f[2])?,
                    min_openness_left: f[5].parse().ok()?,
                    min_openness_right: f[6].parse().ok()?,
                },
                label: BlinkLabel::parse(f[3])?,
                style: ClosureStyle::parse(f[4])?,
            });
        }
        Some(Self {
            entries,
            presses: Vec::new(),
        })
    }

    /// `<dir>/<participant>.ledger.csv`
    pub fn path_for(dir: &Path, participant: &str) -> PathBuf {
        dir.join(format!("{participant}.ledger.csv"))
    }
}

/// Eyelid trajectory of one eye during a closure.
#[derive(Debug, Clone, Copy)]
struct EyeProfile {
    lag_ns: i64,
    ramp_down_ns: i64,
    plateau_ns: i64,
    ramp_up_ns: i64,
    depth: f64,
}

impl EyeProfile {
    fn extent_ns(&self) -> i64 {
        self.lag_ns + self.ramp_down_ns + self.plateau_ns + self.ramp_up_ns
    }

    /// Half-cosine ramps around a flat plateau; with no plateau this is a
    /// raised-cosine dip.
    fn openness(&self, dt: i64) -> f64 {
        let t = dt - self.lag_ns;
        let span = 1.0 - self.depth;
        let down_end = self.ramp_down_ns;
        let plat_end = down_end + self.plateau_ns;
        let up_end = plat_end + self.ramp_up_ns;
        if t <= 0 || t >= up_end {
            1.0
        } else if t < down_end {
            let s = t as f64 / self.ramp_down_ns as f64;
            self.depth + span * (1.0 + (PI * s).cos()) / 2.0
        } else if t < plat_end {
            self.depth
        } else {
            let s = (t - plat_end) as f64 / self.ramp_up_ns as f64;
            self.depth + span * (1.0 - (PI * s).cos()) / 2.0
        }
    }
}

/// Fraction of a half-cosine ramp to `depth` that lies below the threshold.
fn below_fraction(depth: f64) -> f64 {
    let q = (LEDGER_THRESHOLD - depth) / (1.0 - depth);
    1.0 - (2.0 * q - 1.0).clamp(-1.0, 1.0).acos() / PI
}

#[derive(Debug, Clone, Copy)]
struct Closure {
    start_ns: i64,
    style: ClosureStyle,
    left: EyeProfile,
    right: EyeProfile,
}

impl Closure {
    fn end_ns(&self) -> i64 {
        self.start_ns + self.left.extent_ns().max(self.right.extent_ns())
    }

    fn openness(&self, t: i64) -> (f64, f64) {
        let dt = t - self.start_ns;
        (self.left.openness(dt), self.right.openness(dt))
    }
}

fn ms(v: f64) -> i64 {
    (v * NS_PER_MS as f64).round() as i64
}

fn uniform<R: Rng>(rng: &mut R, (a, b): (f64, f64)) -> f64 {
    if a == b {
        a
    } else {
        rng.random_range(a..=b)
    }
}

fn draw_closure<R: Rng>(cfg: &SimConfig, style: ClosureStyle, rng: &mut R) -> Closure {
    let lag = rng.random_range(0..=2) * SAMPLE_PERIOD_NS;
    let (lag_l, lag_r) = if rng.random::<bool>() { (0, lag) } else { (lag, 0) };
    let both = |ramp_down: f64, plateau: f64, ramp_up: f64, depth: f64| {
        let mk = |lag_ns| EyeProfile {
            lag_ns,
            ramp_down_ns: ms(ramp_down),
            plateau_ns: ms(plateau),
            ramp_up_ns: ms(ramp_up),
            depth,
        };
        (mk(lag_l), mk(lag_r))
    };
    let (left, right) = match (style, cfg.hard_mode) {
        (ClosureStyle::Spontaneous, _) => {
            let depth = uniform(rng, cfg.spontaneous_depth);
            let d = uniform(rng, cfg.spontaneous_duration_ms);
            let ramp = d / (2.0 * below_fraction(depth));
            both(ramp, 0.0, ramp, depth)
        }
        (ClosureStyle::ExtendedHold, false) => {
            let depth = rng.random_range(0.0..0.08);
            let plateau = uniform(rng, cfg.extended_hold_plateau_ms);
            both(50.0, plateau, 60.0, depth)
        }
        (ClosureStyle::FirmBrief, false) => {
            let depth = rng.random_range(0.0..0.03);
            let d = uniform(rng, cfg.firm_brief_duration_ms);
            let ramp = 15.0;
            let plateau = (d - 2.0 * ramp * below_fraction(depth)).max(0.0);
            both(ramp, plateau, ramp, depth)
        }
        (ClosureStyle::ExtendedHold, true) => {
            let depth = uniform(rng, cfg.spontaneous_depth);
            let plateau = rng.random_range(60.0..=140.0);
            both(50.0, plateau, 50.0, depth)
        }
        (ClosureStyle::FirmBrief, true) => {
            let depth = rng.random_range(0.0..0.2);
            let (lo, hi) = cfg.spontaneous_duration_ms;
            let d = uniform(rng, (lo + 10.0, hi + 20.0));
            let ramp = d / (2.0 * below_fraction(depth));
            both(ramp, 0.0, ramp, depth)
        }
        (ClosureStyle::Wink, _) => {
            let depth = rng.random_range(0.0..0.1);
            let plateau = uniform(rng, cfg.wink_plateau_ms);
            let closing = EyeProfile {
                lag_ns: 0,
                ramp_down_ns: ms(40.0),
                plateau_ns: ms(plateau),
                ramp_up_ns: ms(40.0),
                depth,
            };
            // the open eye squints a little but stays well above threshold
            let squint = EyeProfile {
                depth: rng.random_range(0.85..0.95),
                ..closing
            };
            if rng.random::<bool>() {
                (closing, squint)
            } else {
                (squint, closing)
            }
        }
    };
    Closure {
        start_ns: 0,
        style,
        left,
        right,
    }
}

fn poisson_arrivals<R: Rng>(rate_per_min: f64, duration_s: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::new();
    if rate_per_min <= 0.0 {
        return out;
    }
    let exp = Exp::new(rate_per_min / 60.0).expect("positive rate");
    let mut t = 0.0;
    loop {
        t += exp.sample(rng);
        if t >= duration_s {
            return out;
        }
        out.push(t);
    }
}

fn schedule<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Vec<Closure> {
    let mut arrivals: Vec<(f64, ClosureStyle)> = Vec::new();
    for t in poisson_arrivals(cfg.spontaneous_rate_per_min, cfg.duration_s, rng) {
        arrivals.push((t, ClosureStyle::Spontaneous));
    }
    let (w_hold, w_firm) = cfg.voluntary_mix;
    for t in poisson_arrivals(cfg.voluntary_rate_per_min, cfg.duration_s, rng) {
        let style = if rng.random::<f64>() * (w_hold + w_firm) < w_hold {
            ClosureStyle::ExtendedHold
        } else {
            ClosureStyle::FirmBrief
        };
        arrivals.push((t, style));
    }
    for t in poisson_arrivals(cfg.wink_rate_per_min, cfg.duration_s, rng) {
        arrivals.push((t, ClosureStyle::Wink));
    }
    arrivals.sort_by(|a, b| a.0.total_cmp(&b.0));

    // colliding closures are pushed later rather than dropped
    let gap = ms(cfg.min_gap_ms);
    let tail = ms(cfg.press_jitter_ms) + 500 * NS_PER_MS;
    let last_start = (cfg.duration_s * NS_PER_S as f64) as i64;
    let mut prev_end = i64::MIN / 2;
    let mut out = Vec::with_capacity(arrivals.len());
    for (t, style) in arrivals {
        let mut c = draw_closure(cfg, style, rng);
        let start = ((t * NS_PER_S as f64) as i64).max(prev_end + gap);
        c.start_ns = start - start.rem_euclid(SAMPLE_PERIOD_NS);
        if c.end_ns() + tail > last_start {
            continue;
        }
        prev_end = c.end_ns();
        out.push(c);
    }
    out
}

/// Closure interval as seen on the noiseless signal with a 0.7 threshold.
fn ledger_blink(c: &Closure) -> Option<BlinkEvent> {
    let (mut onset, mut offset) = (None, None);
    let (mut min_l, mut min_r) = (1.0f64, 1.0f64);
    let (mut closed_l, mut closed_r) = (false, false);
    let mut t = c.start_ns;
    while t <= c.end_ns() + SAMPLE_PERIOD_NS {
        let (l, r) = c.openness(t);
        min_l = min_l.min(l);
        min_r = min_r.min(r);
        let below = l < LEDGER_THRESHOLD || r < LEDGER_THRESHOLD;
        closed_l |= l < LEDGER_THRESHOLD;
        closed_r |= r < LEDGER_THRESHOLD;
        if below && onset.is_none() {
            onset = Some(t);
        }
        if !below && onset.is_some() {
            offset = Some(t);
            break;
        }
        t += SAMPLE_PERIOD_NS;
    }
    let kind = match (closed_l, closed_r) {
        (true, true) => BlinkKind::BothEyes,
        (true, false) => BlinkKind::LeftWink,
        (false, true) => BlinkKind::RightWink,
        (false, false) => return None,
    };
    Some(BlinkEvent {
        onset_ns: onset?,
        offset_ns: offset?,
        kind,
        min_openness_left: min_l,
        min_openness_right: min_r,
    })
}

fn direction(yaw: f64, pitch: f64) -> Vec3 {
    Vec3::new(yaw.sin() * pitch.cos(), -pitch.sin(), yaw.cos() * pitch.cos())
}

/// Alternating fixations and cosine-eased saccades in (yaw, pitch).
struct GazeWalk {
    from: (f64, f64),
    to: (f64, f64),
    phase_end_ns: i64,
    saccade_start_ns: i64,
    in_saccade: bool,
}

impl GazeWalk {
    fn new() -> Self {
        Self {
            from: (0.0, 0.0),
            to: (0.0, 0.0),
            phase_end_ns: 0,
            saccade_start_ns: 0,
            in_saccade: false,
        }
    }

    fn at<R: Rng>(&mut self, t: i64, cfg: &SimConfig, rng: &mut R) -> (f64, f64) {
        while t >= self.phase_end_ns {
            if self.in_saccade {
                self.in_saccade = false;
                self.from = self.to;
                self.phase_end_ns += ms(uniform(rng, cfg.fixation_ms));
            } else {
                self.in_saccade = true;
                let amp = rng.random_range(0.0..=cfg.saccade_max_deg).to_radians();
                let theta = rng.random_range(0.0..2.0 * PI);
                let lim = 20f64.to_radians();
                self.to = (
                    (self.from.0 + amp * theta.cos()).clamp(-lim, lim),
                    (self.from.1 + amp * theta.sin()).clamp(-lim, lim),
                );
                self.saccade_start_ns = self.phase_end_ns;
                self.phase_end_ns += ms(uniform(rng, cfg.saccade_ms));
            }
        }
        if !self.in_saccade {
            return self.from;
        }
        let s = (t - self.saccade_start_ns) as f64 / (self.phase_end_ns - self.saccade_start_ns) as f64;
        let e = (1.0 - (PI * s).cos()) / 2.0;
        (
            self.from.0 + e * (self.to.0 - self.from.0),
            self.from.1 + e * (self.to.1 - self.from.1),
        )
    }
}

pub fn generate_session(cfg: &SimConfig) -> Result<(Recording, GroundTruthLedger), SimError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let closures = schedule(cfg, &mut rng);

    let mut ledger = GroundTruthLedger::default();
    for c in &closures {
        let Some(blink) = ledger_blink(c) else { continue };
        let label = match c.style {
            ClosureStyle::Spontaneous => BlinkLabel::Involuntary,
            _ => BlinkLabel::Voluntary,
        };
        if matches!(c.style, ClosureStyle::ExtendedHold | ClosureStyle::FirmBrief) {
            let j = ms(cfg.press_jitter_ms);
            ledger.presses.push(blink.offset_ns + rng.random_range(-j..=j));
        }
        ledger.entries.push(LedgerEntry { blink, label, style: c.style });
    }
    ledger.presses.sort_unstable();

    let n_frames = (cfg.duration_s * NS_PER_S as f64 / SAMPLE_PERIOD_NS as f64).round() as i64;
    let open_noise = Normal::new(0.0, cfg.openness_noise).expect("finite sigma");
    let pupil_noise = Normal::new(0.0, cfg.pupil_noise_mm).expect("finite sigma");
    let dir_noise = Normal::new(0.0, cfg.direction_noise_rad).expect("finite sigma");
    let walk_noise = Normal::new(0.0, 0.004).expect("finite sigma");
    let pupil_base: f64 = rng.random_range(3.5..5.5);
    let vergence = 1f64.to_radians();
    let bell = 3f64.to_radians();

    let mut walk = GazeWalk::new();
    let mut pupil = pupil_base;
    let mut last_offset: Option<i64> = None;
    let mut k = 0;
    let mut frames = Vec::with_capacity(n_frames.max(0) as usize);
    for i in 0..n_frames {
        let t = i * SAMPLE_PERIOD_NS;
        while k < closures.len() && t >= closures[k].end_ns() {
            last_offset = Some(closures[k].end_ns());
            k += 1;
        }
        let (ol, or) = match closures.get(k) {
            Some(c) if t >= c.start_ns => c.openness(t),
            _ => (1.0, 1.0),
        };

        // eyes roll down slightly while the lids close
        let (yaw, pitch) = walk.at(t, cfg, &mut rng);
        let pitch = pitch + bell * (1.0 - ol.min(or));

        pupil += 0.002 * (pupil_base - pupil) + walk_noise.sample(&mut rng);
        pupil = pupil.clamp(2.0, 8.0);
        let reflex = match last_offset {
            Some(o) => {
                let x = (t - o) as f64 / (0.4 * NS_PER_S as f64);
                0.3 * x * (1.0 - x).exp()
            }
            None => 0.0,
        };
        let p = (pupil - reflex).clamp(2.0, 8.0);

        let noisy_dir = |yaw: f64, pitch: f64, rng: &mut ChaCha8Rng| {
            direction(yaw + dir_noise.sample(rng), pitch + dir_noise.sample(rng))
        };
        let mut f = GazeFrame {
            timestamp_ns: t,
            left_pupil_mm: (p + pupil_noise.sample(&mut rng)).clamp(2.0, 8.0),
            right_pupil_mm: (p + 0.05 + pupil_noise.sample(&mut rng)).clamp(2.0, 8.0),
            left_openness: (ol - open_noise.sample(&mut rng).abs()).clamp(0.0, 1.0),
            right_openness: (or - open_noise.sample(&mut rng).abs()).clamp(0.0, 1.0),
            left_dir: noisy_dir(yaw + vergence, pitch, &mut rng),
            right_dir: noisy_dir(yaw - vergence, pitch, &mut rng),
            valid: true,
        };
        if cfg.dropout_prob > 0.0 && rng.random::<f64>() < cfg.dropout_prob {
            f.valid = false;
        }
        frames.push(f);
    }

    let rec = Recording {
        participant_id: cfg.participant_id.clone(),
        device: "sim".into(),
        rate_hz: crate::types::SAMPLE_RATE_HZ,
        frames,
        button_presses: ledger.presses.clone(),
    };
    Ok((rec, ledger))
}

/// Re-emits frames at `speed` times real time; `speed == 0` means no pacing.
pub struct Replay<'a> {
    frames: &'a [GazeFrame],
    next: usize,
    speed: f64,
    started: Option<Instant>,
}

pub fn replay(recording: &Recording, speed: f64) -> Replay<'_> {
    Replay {
        frames: &recording.frames,
        next: 0,
        speed: speed.max(0.0),
        started: None,
    }
}

impl Iterator for Replay<'_> {
    type Item = GazeFrame;

    fn next(&mut self) -> Option<GazeFrame> {
        let f = *self.frames.get(self.next)?;
        self.next += 1;
        if self.speed > 0.0 {
            let start = *self.started.get_or_insert_with(Instant::now);
            let rel_ns = (f.timestamp_ns - self.frames[0].timestamp_ns) as f64 / self.speed;
            let due = start + Duration::from_nanos(rel_ns.max(0.0) as u64);
            let now = Instant::now();
            if due > now {
                thread::sleep(due - now);
            }
        }
        Some(f)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.frames.len() - self.next;
        (n, Some(n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::label_blinks;
    use crate::types::CalibrationProfile;

    fn short(seed: u64, minutes: f64) -> SimConfig {
        SimConfig {
            seed,
            duration_s: minutes * 60.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn below_fraction_matches_numeric_scan() {
        for depth in [0.0f64, 0.1, 0.3, 0.5] {
            let n = 200_000;
            let below = (0..n)
                .filter(|&i| {
                    let s = (i as f64 + 0.5) / n as f64;
                    depth + (1.0 - depth) * (1.0 + (PI * s).cos()) / 2.0 < LEDGER_THRESHOLD
                })
                .count();
            assert!((below as f64 / n as f64 - below_fraction(depth)).abs() < 1e-4);
        }
    }

    #[test]
    fn zero_rates_give_no_closures() {
        let cfg = SimConfig {
            spontaneous_rate_per_min: 0.0,
            voluntary_rate_per_min: 0.0,
            wink_rate_per_min: 0.0,
            ..short(1, 1.0)
        };
        let (rec, ledger) = generate_session(&cfg).unwrap();
        assert!(ledger.entries.is_empty() && rec.button_presses.is_empty());
        let floor = 1.0 - 6.0 * cfg.openness_noise;
        assert!(rec
            .frames
            .iter()
            .all(|f| f.left_openness > floor && f.right_openness > floor && f.left_openness <= 1.0));
    }

    #[test]
    fn identical_configs_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (a, la) = generate_session(&short(9, 0.5)).unwrap();
        let (b, lb) = generate_session(&short(9, 0.5)).unwrap();
        let pa = a.write_to_dir(&dir.path().join("a")).unwrap();
        let pb = b.write_to_dir(&dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        assert_eq!(la.to_csv(), lb.to_csv());
        let (c, _) = generate_session(&short(10, 0.5)).unwrap();
        assert_ne!(a.frames, c.frames);
    }

    #[test]
    fn ledger_intervals_dip_below_threshold_and_gaps_stay_open() {
        let (rec, ledger) = generate_session(&short(2, 3.0)).unwrap();
        for e in &ledger.entries {
            let b = &e.blink;
            assert!(b.min_openness_left.min(b.min_openness_right) < LEDGER_THRESHOLD);
            assert!(b.offset_ns > b.onset_ns);
        }
        // frames more than 150 ms away from any closure are fully open
        let far = |t: i64| {
            ledger
                .entries
                .iter()
                .all(|e| t < e.blink.onset_ns - 150 * NS_PER_MS || t > e.blink.offset_ns + 150 * NS_PER_MS)
        };
        for f in rec.frames.iter().filter(|f| far(f.timestamp_ns)) {
            assert!(f.left_openness > 0.9 && f.right_openness > 0.9, "{f:?}");
        }
    }

    #[test]
    fn ledger_is_reconstructed_by_labeling() {
        let (rec, ledger) = generate_session(&short(4, 5.0)).unwrap();
        let labeled = label_blinks(&rec, CalibrationProfile::default()).unwrap();
        let both: Vec<_> = ledger
            .entries
            .iter()
            .filter(|e| e.blink.kind == BlinkKind::BothEyes)
            .collect();
        let mut agree = 0;
        for e in &both {
            let hit = labeled
                .iter()
                .find(|l| (l.blink.offset_ns - e.blink.offset_ns).abs() <= 30 * NS_PER_MS);
            if hit.is_some_and(|l| l.label == e.label) {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.99 * both.len() as f64, "{agree}/{}", both.len());
        assert_eq!(labeled.len(), both.len());
    }

    #[test]
    fn spontaneous_durations_stay_in_range() {
        let (_, ledger) = generate_session(&short(5, 5.0)).unwrap();
        for e in ledger.entries.iter().filter(|e| e.style == ClosureStyle::Spontaneous) {
            let d = e.blink.duration_ns() as f64 / NS_PER_MS as f64;
            assert!((90.0..=165.0).contains(&d), "{d}");
        }
    }

    #[test]
    fn unpaced_replay_preserves_order() {
        let (rec, _) = generate_session(&short(6, 0.2)).unwrap();
        let out: Vec<_> = replay(&rec, 0.0).collect();
        assert_eq!(out, rec.frames);
    }

    #[test]
    fn paced_replay_takes_scaled_wall_time() {
        let (rec, _) = generate_session(&short(6, 2.0 / 60.0)).unwrap();
        let span = (rec.frames.last().unwrap().timestamp_ns - rec.frames[0].timestamp_ns) as f64 / 1e9;
        let t0 = Instant::now();
        assert_eq!(replay(&rec, 4.0).count(), rec.frames.len());
        let wall = t0.elapsed().as_secs_f64();
        assert!((wall - span / 4.0).abs() < 0.02 * span / 4.0 + 0.01, "{wall}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = SimConfig {
            spontaneous_rate_per_min: -1.0,
            ..SimConfig::default()
        };
        assert!(generate_session(&bad).is_err());
        let bad = SimConfig {
            spontaneous_duration_ms: (0.0, 10.0),
            ..SimConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ledger_csv_round_trip() {
        let (_, ledger) = generate_session(&short(7, 1.0)).unwrap();
        let back = GroundTruthLedger::from_csv(&ledger.to_csv()).unwrap();
        assert_eq!(back.entries, ledger.entries);
    }
}
