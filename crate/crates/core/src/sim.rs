//! Event-driven simulation of the Kac walk on the microcanonical shell.
//!
//! Each unordered pair `{i, j}` collides at rate `(1/N) c_d |v_i − v_j|`,
//! optionally multiplied by a constant tilt factor `e^s`. Jump times are
//! generated by thinning against the majorant `((N−1)/2) c_d 2 v_max`, so the
//! trajectory is exact in law with no time step.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed::{rng_for, tag, SimRng};
use crate::velocity::{collide_unchecked, scatter_direction_counted, Dim, ParticleState, Velocity};

/// Relative drift of the conserved quantities that is treated as a bug.
pub const DRIFT_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub time: f64,
    pub pair: (usize, usize),
    pub omega: Velocity,
    pub pre: (Velocity, Velocity),
    pub post: (Velocity, Velocity),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    /// Empty unless event recording was requested.
    pub events: Vec<CollisionEvent>,
    pub n: usize,
    pub t: f64,
    /// Number of accepted collisions, recorded or not.
    pub count: u64,
}

impl FlowRecord {
    /// `q_{N,T}`: collisions per particle per unit time.
    pub fn collision_count(&self) -> f64 {
        if self.n == 0 || !(self.t > 0.0) {
            return 0.0;
        }
        self.count as f64 / (self.n as f64 * self.t)
    }

    /// `(1/N) Σ_events F(t, v, v_*, v', v_*')` over the recorded events.
    pub fn empirical_flow_integral<F>(&self, f: F) -> f64
    where
        F: Fn(f64, Velocity, Velocity, Velocity, Velocity) -> f64,
    {
        let total: f64 = self
            .events
            .iter()
            .map(|ev| f(ev.time, ev.pre.0, ev.pre.1, ev.post.0, ev.post.1))
            .sum();
        total / self.n as f64
    }
}

/// `q_{N,T}` of a flow record.
pub fn collision_count(rec: &FlowRecord) -> f64 {
    rec.collision_count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub velocities: Vec<Velocity>,
}

impl Snapshot {
    /// Counts of speeds in `bins` equal cells of `[0, v_cut)`; the last entry
    /// of the returned vector counts speeds at or beyond `v_cut`.
    pub fn speed_histogram(&self, bins: usize, v_cut: f64) -> Vec<u64> {
        speed_histogram(&self.velocities, bins, v_cut)
    }
}

pub fn speed_histogram(velocities: &[Velocity], bins: usize, v_cut: f64) -> Vec<u64> {
    let mut counts = vec![0u64; bins + 1];
    let scale = bins as f64 / v_cut;
    for v in velocities {
        let k = ((v.norm() * scale) as usize).min(bins);
        counts[k] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub d: Dim,
    pub e: f64,
    pub t: f64,
    pub seed: u64,
    #[serde(default)]
    pub tilt_s: f64,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    /// Accepted events between exact recomputations of `v_max`; `None` means `64 N`.
    #[serde(default)]
    pub majorant_refresh: Option<u64>,
    #[serde(default)]
    pub record_events: bool,
}

impl SimConfig {
    pub fn new(n: usize, d: Dim, e: f64, t: f64, seed: u64) -> Self {
        SimConfig {
            n,
            d,
            e,
            t,
            seed,
            tilt_s: 0.0,
            snapshot_times: Vec::new(),
            majorant_refresh: None,
            record_events: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return invalid(format!("N must be at least 2, got {}", self.n));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return invalid(format!("T must be positive, got {}", self.t));
        }
        if !(self.e > 0.0 && self.e.is_finite()) {
            return invalid(format!("e must be positive, got {}", self.e));
        }
        if !self.tilt_s.is_finite() {
            return invalid("tilt must be finite");
        }
        if self.snapshot_times.iter().any(|&s| !(0.0..=self.t).contains(&s)) {
            return invalid("snapshot times must lie in [0, T]");
        }
        if self.majorant_refresh == Some(0) {
            return invalid("majorant refresh cadence must be positive");
        }
        Ok(())
    }
}

/// Running Kac walk. Time only moves forward through [`KacWalk::advance`].
#[derive(Clone, Debug)]
pub struct KacWalk {
    v: Vec<Velocity>,
    d: Dim,
    e: f64,
    time: f64,
    rng: SimRng,
    tilt: f64,
    v_max: f64,
    v_cap: f64,
    refresh_every: u64,
    since_refresh: u64,
    accepted: u64,
    proposals: u64,
    /// `S_i = Σ_j |v_i − v_j|`, kept only when the exact total rate is tracked.
    pair_sums: Option<Vec<f64>>,
    /// `Σ_{i<j} |v_i − v_j|`.
    pair_total: f64,
    rate_integral: f64,
}

impl KacWalk {
    pub fn new(initial: ParticleState, tilt_s: f64, rng: SimRng) -> Self {
        let n = initial.n();
        let v_cap = (2.0 * n as f64 * initial.e).sqrt();
        let mut walk = KacWalk {
            d: initial.d,
            e: initial.e,
            v: initial.velocities,
            time: 0.0,
            rng,
            tilt: tilt_s.exp(),
            v_max: 0.0,
            v_cap,
            refresh_every: 64 * n as u64,
            since_refresh: 0,
            accepted: 0,
            proposals: 0,
            pair_sums: None,
            pair_total: 0.0,
            rate_integral: 0.0,
        };
        walk.refresh();
        walk
    }

    pub fn with_refresh(mut self, every: u64) -> Self {
        self.refresh_every = every.max(1);
        self
    }

    /// Keeps the exact untilted total rate `Λ = (1/N) Σ_{i<j} c_d |v_i − v_j|`
    /// and its time integral, at `O(N)` extra cost per collision.
    pub fn track_total_rate(mut self) -> Self {
        self.reset_pair_sums();
        self
    }

    fn reset_pair_sums(&mut self) {
        let s = self.exact_pair_sums();
        self.pair_total = 0.5 * s.iter().sum::<f64>();
        self.pair_sums = Some(s);
    }

    fn exact_pair_sums(&self) -> Vec<f64> {
        let n = self.v.len();
        let mut s = vec![0.0; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let r = (self.v[i] - self.v[j]).norm();
                s[i] += r;
                s[j] += r;
            }
        }
        s
    }

    pub fn n(&self) -> usize {
        self.v.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn velocities(&self) -> &[Velocity] {
        &self.v
    }

    pub fn accepted(&self) -> u64 {
        self.accepted
    }

    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    /// Current `Λ`, if tracked.
    pub fn total_rate(&self) -> Option<f64> {
        self.pair_sums
            .as_ref()
            .map(|_| self.pair_total * self.d.collision_constant() / self.v.len() as f64)
    }

    /// `∫ Λ dt` since the last call to [`KacWalk::take_rate_integral`].
    pub fn take_rate_integral(&mut self) -> f64 {
        std::mem::take(&mut self.rate_integral)
    }

    pub fn state(&self) -> ParticleState {
        ParticleState {
            velocities: self.v.clone(),
            e: self.e,
            d: self.d,
        }
    }

    pub fn into_state(self) -> ParticleState {
        ParticleState {
            velocities: self.v,
            e: self.e,
            d: self.d,
        }
    }

    /// Replaces the configuration (cloning) while keeping clock and RNG.
    pub fn set_velocities(&mut self, v: &[Velocity]) {
        self.v.clear();
        self.v.extend_from_slice(v);
        self.refresh();
    }

    pub fn set_rng(&mut self, rng: SimRng) {
        self.rng = rng;
    }

    fn refresh(&mut self) {
        let m = self.v.iter().map(|v| v.norm()).fold(0.0, f64::max);
        self.v_max = m.min(self.v_cap).max(f64::MIN_POSITIVE);
        self.since_refresh = 0;
        self.check_drift();
        if self.pair_sums.is_some() {
            self.reset_pair_sums();
        }
    }

    fn check_drift(&self) {
        let n = self.v.len() as f64;
        let (mut en, mut p) = (0.0, Velocity::ZERO);
        for &v in &self.v {
            en += v.energy();
            p += v;
        }
        let de = (en / n - self.e).abs() / self.e;
        let dp = p.norm() / n / (2.0 * self.e).sqrt();
        assert!(
            de <= DRIFT_TOLERANCE && dp <= DRIFT_TOLERANCE,
            "conservation drift beyond tolerance: energy {de:.3e}, momentum {dp:.3e}"
        );
    }

    /// Runs until `t_end`, calling `observer` on every accepted collision.
    pub fn advance<F: FnMut(&CollisionEvent)>(&mut self, t_end: f64, observer: &mut F) {
        let n = self.v.len();
        let nf = n as f64;
        let cd = self.d.collision_constant();
        let base = 0.5 * (nf - 1.0) * cd * 2.0 * self.tilt;
        while self.time < t_end {
            let lambda_maj = base * self.v_max;
            let dt = self.rng.sample::<f64, _>(Exp1) / lambda_maj;
            if self.time + dt > t_end {
                self.accumulate_rate(t_end - self.time);
                self.time = t_end;
                break;
            }
            self.accumulate_rate(dt);
            self.time += dt;
            self.proposals += 1;

            let i = self.rng.random_range(0..n);
            let mut j = self.rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let (i, j) = if i < j { (i, j) } else { (j, i) };
            let (vi, vj) = (self.v[i], self.v[j]);
            let rel = vi - vj;
            let speed = rel.norm();
            let accept = speed / (2.0 * self.v_max);
            assert!(accept <= 1.0 + 1e-12, "majorant violated: acceptance {accept}");
            if !(self.rng.random::<f64>() < accept) {
                continue;
            }

            let (omega, _) = scatter_direction_counted(rel * (1.0 / speed), self.d, &mut self.rng);
            let (wi, wj) = collide_unchecked(vi, vj, omega);
            if let Some(sums) = self.pair_sums.as_mut() {
                self.pair_total += update_pair_sums(sums, &self.v, i, j, wi, wj);
            }
            self.v[i] = wi;
            self.v[j] = wj;
            self.accepted += 1;
            self.since_refresh += 1;
            self.v_max = self.v_max.max(wi.norm()).max(wj.norm()).min(self.v_cap);
            observer(&CollisionEvent {
                time: self.time,
                pair: (i, j),
                omega,
                pre: (vi, vj),
                post: (wi, wj),
            });
            if self.since_refresh >= self.refresh_every {
                self.refresh();
            }
        }
    }

    #[inline]
    fn accumulate_rate(&mut self, dt: f64) {
        if let Some(lambda) = self.total_rate() {
            self.rate_integral += lambda * dt;
        }
    }
}

/// Updates `S_k` for a collision of `(i, j)` and returns the change of `Σ_{i<j} |v_i − v_j|`.
fn update_pair_sums(sums: &mut [f64], v: &[Velocity], i: usize, j: usize, wi: Velocity, wj: Velocity) -> f64 {
    let (vi, vj) = (v[i], v[j]);
    let (mut si, mut sj, mut delta) = (0.0, 0.0, 0.0);
    for k in 0..v.len() {
        if k == i || k == j {
            continue;
        }
        let (a, b) = ((wi - v[k]).norm(), (wj - v[k]).norm());
        let dk = a + b - (vi - v[k]).norm() - (vj - v[k]).norm();
        sums[k] += dk;
        delta += dk;
        si += a;
        sj += b;
    }
    let rij = (wi - wj).norm();
    sums[i] = si + rij;
    sums[j] = sj + rij;
    delta + rij - (vi - vj).norm()
}

/// Runs the walk from `initial` over `[0, cfg.t]`. Snapshots are taken at the
/// requested times and returned in ascending time order.
pub fn simulate(initial: ParticleState, cfg: &SimConfig) -> Result<(ParticleState, FlowRecord, Vec<Snapshot>)> {
    cfg.validate()?;
    if initial.n() != cfg.n || initial.d != cfg.d || (initial.e - cfg.e).abs() > 1e-12 * cfg.e {
        return invalid("initial state does not match the configuration (N, d, e)");
    }
    initial.check_shell(crate::velocity::SHELL_TOLERANCE)?;
    let rng = rng_for(cfg.seed, &[tag::DYNAMICS]);
    let mut walk = KacWalk::new(initial, cfg.tilt_s, rng);
    if let Some(every) = cfg.majorant_refresh {
        walk = walk.with_refresh(every);
    }
    let mut times = cfg.snapshot_times.clone();
    times.sort_by(f64::total_cmp);

    let mut events = Vec::new();
    let mut snapshots = Vec::with_capacity(times.len());
    let record = cfg.record_events;
    let mut observer = |ev: &CollisionEvent| {
        if record {
            events.push(*ev);
        }
    };
    for &ts in &times {
        walk.advance(ts, &mut observer);
        snapshots.push(Snapshot {
            time: ts,
            velocities: walk.velocities().to_vec(),
        });
    }
    walk.advance(cfg.t, &mut observer);
    let rec = FlowRecord {
        events,
        n: cfg.n,
        t: cfg.t,
        count: walk.accepted(),
    };
    Ok((walk.into_state(), rec, snapshots))
}
