//! Continuous-time simulation of the open ASEP on the extended state
//! `(tau, N)`, where `N` counts the net number of particles that entered
//! through the left boundary since `t = 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Configuration {
    pub tau: Vec<bool>,
    /// Net particles entered at site 1 from the left reservoir.
    pub net_left: i64,
    pub t: f64,
}

impl Configuration {
    pub fn new(tau: Vec<bool>) -> Self {
        Self { tau, net_left: 0, t: 0.0 }
    }

    pub fn ell(&self) -> usize {
        self.tau.len()
    }

    pub fn particles(&self) -> usize {
        self.tau.iter().filter(|&&b| b).count()
    }

    /// Bit `i - 1` of the index is `tau_i`.
    pub fn index(&self) -> usize {
        tau_index(&self.tau)
    }
}

pub fn tau_index(tau: &[bool]) -> usize {
    tau.iter().enumerate().fold(0, |acc, (i, &b)| acc | (usize::from(b) << i))
}

pub fn tau_from_index(index: usize, ell: usize) -> Vec<bool> {
    (0..ell).map(|i| index >> i & 1 == 1).collect()
}

/// `h(0) = -2N`, `h(i) - h(i-1) = 2 tau_i - 1`.
pub fn height_profile(config: &Configuration) -> Vec<i64> {
    let mut h = Vec::with_capacity(config.ell() + 1);
    let mut cur = -2 * config.net_left;
    h.push(cur);
    for &b in &config.tau {
        cur += if b { 1 } else { -1 };
        h.push(cur);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Event {
    /// Particle at 0-based site `i` jumps to `i + 1`.
    HopRight(usize),
    /// Particle at 0-based site `i + 1` jumps to `i`.
    HopLeft(usize),
    LeftCreate,
    LeftAnnihilate,
    RightCreate,
    RightAnnihilate,
}

/// Flat table of event rates: right hops on each bond, left hops on each bond,
/// then the four boundary events.
#[derive(Debug, Clone)]
pub struct EventTable {
    bonds: usize,
    rates: Vec<f64>,
    total: f64,
}

impl EventTable {
    pub fn build(config: &Configuration, params: &ModelParams) -> Self {
        let bonds = config.ell().saturating_sub(1);
        let mut table = Self { bonds, rates: vec![0.0; 2 * bonds + 4], total: 0.0 };
        for b in 0..bonds {
            table.rates[b] = table.right_rate(config, params, b);
            table.rates[bonds + b] = table.left_rate(config, params, b);
        }
        table.refresh_boundary(config, params);
        table.total = table.rates.iter().sum();
        table
    }

    fn right_rate(&self, c: &Configuration, _p: &ModelParams, b: usize) -> f64 {
        if c.tau[b] && !c.tau[b + 1] {
            1.0
        } else {
            0.0
        }
    }

    fn left_rate(&self, c: &Configuration, p: &ModelParams, b: usize) -> f64 {
        if c.tau[b + 1] && !c.tau[b] {
            p.q
        } else {
            0.0
        }
    }

    fn refresh_boundary(&mut self, c: &Configuration, p: &ModelParams) {
        let k = 2 * self.bonds;
        let first = c.tau[0];
        let last = c.tau[c.ell() - 1];
        self.rates[k] = if first { 0.0 } else { p.alpha };
        self.rates[k + 1] = if first { p.gamma } else { 0.0 };
        self.rates[k + 2] = if last { 0.0 } else { p.delta };
        self.rates[k + 3] = if last { p.beta } else { 0.0 };
    }

    fn event_at(&self, k: usize) -> Event {
        let b = self.bonds;
        match k {
            k if k < b => Event::HopRight(k),
            k if k < 2 * b => Event::HopLeft(k - b),
            k => [Event::LeftCreate, Event::LeftAnnihilate, Event::RightCreate, Event::RightAnnihilate]
                [k - 2 * b],
        }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Every event with its current rate (zero-rate events included).
    pub fn events(&self) -> Vec<(Event, f64)> {
        self.rates.iter().enumerate().map(|(k, &r)| (self.event_at(k), r)).collect()
    }

    fn choose(&self, target: f64) -> Event {
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (k, &r) in self.rates.iter().enumerate() {
            if r > 0.0 {
                acc += r;
                last_positive = k;
                if target < acc {
                    return self.event_at(k);
                }
            }
        }
        self.event_at(last_positive)
    }

    /// Recompute the rates touching `site` (0-based) after it changed.
    fn update_site(&mut self, c: &Configuration, p: &ModelParams, site: usize) {
        let mut delta = 0.0;
        for b in [site.wrapping_sub(1), site] {
            if b < self.bonds {
                let r = self.right_rate(c, p, b);
                let l = self.left_rate(c, p, b);
                delta += r - self.rates[b] + l - self.rates[self.bonds + b];
                self.rates[b] = r;
                self.rates[self.bonds + b] = l;
            }
        }
        if site == 0 || site + 1 == c.ell() {
            let k = 2 * self.bonds;
            let old: f64 = self.rates[k..].iter().sum();
            self.refresh_boundary(c, p);
            delta += self.rates[k..].iter().sum::<f64>() - old;
        }
        self.total += delta;
    }
}

/// Boundary flux counters, used to check particle bookkeeping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FluxCounters {
    pub left_in: u64,
    pub left_out: u64,
    pub right_in: u64,
    pub right_out: u64,
}

impl FluxCounters {
    pub fn net_in(&self) -> i64 {
        self.left_in as i64 - self.left_out as i64 + self.right_in as i64 - self.right_out as i64
    }
}

/// Gillespie direct-method simulator with an incrementally maintained table.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: ModelParams,
    config: Configuration,
    table: EventTable,
    counters: FluxCounters,
    events: u64,
}

impl Simulator {
    pub fn new(params: ModelParams, config: Configuration) -> Result<Self> {
        if config.ell() == 0 {
            return Err(Error::InvalidParameter("configuration must have at least one site".into()));
        }
        let table = EventTable::build(&config, &params);
        Ok(Self { params, config, table, counters: FluxCounters::default(), events: 0 })
    }

    pub fn config(&self) -> &Configuration {
        &self.config
    }

    pub fn counters(&self) -> FluxCounters {
        self.counters
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    fn holding_time(&mut self, rng: &mut RandomStream) -> Result<f64> {
        if self.events.is_multiple_of(4096) {
            self.table.total = self.table.rates.iter().sum();
        }
        let total = self.table.total;
        if !(total > 0.0) {
            return Err(Error::Absorbing);
        }
        Ok(-rng.uniform_open0().ln() / total)
    }

    fn fire(&mut self, rng: &mut RandomStream) -> Event {
        let event = self.table.choose(rng.uniform() * self.table.total);
        let c = &mut self.config;
        let last = c.ell() - 1;
        let touched: [Option<usize>; 2] = match event {
            Event::HopRight(i) => {
                c.tau[i] = false;
                c.tau[i + 1] = true;
                [Some(i), Some(i + 1)]
            }
            Event::HopLeft(i) => {
                c.tau[i + 1] = false;
                c.tau[i] = true;
                [Some(i), Some(i + 1)]
            }
            Event::LeftCreate => {
                c.tau[0] = true;
                c.net_left += 1;
                self.counters.left_in += 1;
                [Some(0), None]
            }
            Event::LeftAnnihilate => {
                c.tau[0] = false;
                c.net_left -= 1;
                self.counters.left_out += 1;
                [Some(0), None]
            }
            Event::RightCreate => {
                c.tau[last] = true;
                self.counters.right_in += 1;
                [Some(last), None]
            }
            Event::RightAnnihilate => {
                c.tau[last] = false;
                self.counters.right_out += 1;
                [Some(last), None]
            }
        };
        for site in touched.into_iter().flatten() {
            self.table.update_site(&self.config, &self.params, site);
        }
        self.events += 1;
        event
    }

    /// Advance by one event.
    pub fn step(&mut self, rng: &mut RandomStream) -> Result<Event> {
        let dt = self.holding_time(rng)?;
        self.config.t += dt;
        Ok(self.fire(rng))
    }

    /// Run until time `t_end`, calling `record` at each time in `marks`
    /// (sorted, all `>= ` current time) with the state at that instant.
    pub fn run_marks(
        &mut self,
        marks: &[f64],
        rng: &mut RandomStream,
        mut record: impl FnMut(&Configuration, f64),
    ) -> Result<()> {
        let mut next = 0;
        while next < marks.len() {
            let dt = self.holding_time(rng)?;
            let t_new = self.config.t + dt;
            while next < marks.len() && marks[next] < t_new {
                record(&self.config, marks[next]);
                next += 1;
            }
            if next == marks.len() {
                break;
            }
            self.config.t = t_new;
            self.fire(rng);
        }
        Ok(())
    }
}

/// One Gillespie step from `config`, returning the new configuration.
pub fn step(config: &Configuration, params: &ModelParams, rng: &mut RandomStream) -> Result<Configuration> {
    let mut sim = Simulator::new(*params, config.clone())?;
    sim.step(rng)?;
    Ok(sim.config)
}

#[derive(Debug, Clone, Serialize)]
pub struct DynamicsRun {
    pub snapshots: Vec<Configuration>,
    pub events: u64,
    pub counters: FluxCounters,
}

/// Runs to `burn_in_time`, then records the state every `thin_time` until
/// `n_samples` snapshots are taken. The first snapshot is at `burn_in_time`.
pub fn sample_stationary_dynamics(
    params: &ModelParams,
    initial: Configuration,
    burn_in_time: f64,
    n_samples: usize,
    thin_time: f64,
    rng: &mut RandomStream,
) -> Result<DynamicsRun> {
    if !(burn_in_time >= 0.0) || !(thin_time > 0.0) {
        return Err(Error::InvalidParameter("burn-in must be >= 0 and thin time > 0".into()));
    }
    let mut sim = Simulator::new(*params, initial)?;
    let t0 = sim.config.t;
    let marks: Vec<f64> = (0..n_samples).map(|k| t0 + burn_in_time + k as f64 * thin_time).collect();
    let mut snapshots = Vec::with_capacity(n_samples);
    sim.run_marks(&marks, rng, |c, t| {
        let mut snap = c.clone();
        snap.t = t;
        snapshots.push(snap);
    })?;
    Ok(DynamicsRun { snapshots, events: sim.events, counters: sim.counters })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(ell: usize) -> ModelParams {
        ModelParams::from_densities(0.7, 0.3, 0.5).unwrap().with_ell(ell)
    }

    fn nonzero(table: &EventTable) -> Vec<(Event, f64)> {
        table.events().into_iter().filter(|&(_, r)| r > 0.0).collect()
    }

    #[test]
    fn single_site_empty() {
        let p = params(1);
        let c = Configuration::new(vec![false]);
        let t = EventTable::build(&c, &p);
        assert_eq!(nonzero(&t), vec![(Event::LeftCreate, p.alpha), (Event::RightCreate, p.delta)]);
        let mut rng = RandomStream::new(1, 0);
        for _ in 0..50 {
            let mut sim = Simulator::new(p, c.clone()).unwrap();
            let e = sim.step(&mut rng).unwrap();
            assert_eq!(sim.config().tau, vec![true]);
            assert_eq!(sim.config().net_left, i64::from(e == Event::LeftCreate));
            assert!(sim.config().t > 0.0);
        }
    }

    #[test]
    fn two_sites_table() {
        let p = ModelParams::from_densities(0.7, 0.3, 0.0).unwrap();
        let p = ModelParams { gamma: 0.2, delta: 0.1, ..p };
        let c = Configuration::new(vec![true, false]);
        let t = EventTable::build(&c, &p);
        assert_eq!(
            nonzero(&t),
            vec![(Event::HopRight(0), 1.0), (Event::LeftAnnihilate, 0.2), (Event::RightCreate, 0.1)]
        );
        assert!((t.total() - 1.3).abs() < 1e-15);
    }

    #[test]
    fn absorbing_state() {
        let p = ModelParams { alpha: 0.0, beta: 0.0, gamma: 0.0, delta: 0.0, ..params(1) };
        let c = Configuration::new(vec![true]);
        let mut rng = RandomStream::new(1, 0);
        assert!(matches!(step(&c, &p, &mut rng), Err(Error::Absorbing)));
    }

    #[test]
    fn heights() {
        let c = Configuration::new(vec![true, true]);
        assert_eq!(height_profile(&c), vec![0, 1, 2]);
        let c = Configuration { tau: vec![false, false], net_left: 1, t: 0.0 };
        assert_eq!(height_profile(&c), vec![-2, -3, -4]);
        let c = Configuration { tau: vec![true, false, true, true, false], net_left: -3, t: 0.0 };
        let h = height_profile(&c);
        assert_eq!(h[5] - h[0], 2 * c.particles() as i64 - 5);
    }

    #[test]
    fn incremental_table_matches_rebuild() {
        let p = params(7);
        let mut sim = Simulator::new(p, Configuration::new(vec![false; 7])).unwrap();
        let mut rng = RandomStream::new(3, 1);
        for _ in 0..5000 {
            sim.step(&mut rng).unwrap();
            let fresh = EventTable::build(sim.config(), &p);
            assert_eq!(fresh.rates, sim.table.rates);
            assert!((fresh.total - sim.table.total).abs() < 1e-9);
        }
    }

    #[test]
    fn particle_bookkeeping() {
        let p = params(6);
        let init = Configuration::new(vec![true, false, true, false, false, true]);
        let n0 = init.particles() as i64;
        let mut sim = Simulator::new(p, init).unwrap();
        let mut rng = RandomStream::new(9, 0);
        for _ in 0..20_000 {
            sim.step(&mut rng).unwrap();
            let c = sim.counters();
            assert_eq!(sim.config().particles() as i64 - n0, c.net_in());
            assert_eq!(sim.config().net_left, c.left_in as i64 - c.left_out as i64);
        }
    }

    #[test]
    fn single_site_stationary_occupation() {
        // two-state chain: P(tau_1 = 1) = (alpha + delta) / (alpha + beta + gamma + delta) = 0.5
        let p = params(1);
        let mut rng = RandomStream::new(5, 0);
        let run = sample_stationary_dynamics(&p, Configuration::new(vec![false]), 10.0, 20_000, 3.0, &mut rng)
            .unwrap();
        assert_eq!(run.snapshots.len(), 20_000);
        let occ = run.snapshots.iter().filter(|c| c.tau[0]).count() as f64 / 20_000.0;
        // snapshots 3 time units apart are nearly independent (relaxation rate 1.7)
        assert!((occ - 0.5).abs() < 0.02, "{occ}");
    }

    #[test]
    fn zero_samples() {
        let p = params(3);
        let mut rng = RandomStream::new(5, 0);
        let run = sample_stationary_dynamics(&p, Configuration::new(vec![false; 3]), 1.0, 0, 1.0, &mut rng).unwrap();
        assert!(run.snapshots.is_empty());
    }

    #[test]
    fn index_round_trip() {
        for i in 0..64 {
            assert_eq!(tau_index(&tau_from_index(i, 6)), i);
        }
        assert_eq!(tau_index(&[true, false, false]), 1);
    }
}
