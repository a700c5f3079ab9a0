use super::attack::{AttackPlan, RunClock};
use super::stimulus::StimulusSchedule;
use super::{NeuronState, SpikingNetwork};
use crate::error::{Error, Result};
use crate::metrics::{whole_ratio, SpikeEvent, SpikeRecord};

/// Voltage of one neuron just before and after a flooding impulse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpulseRecord {
    pub neuron: usize,
    pub v_before: f64,
    pub v_after: f64,
}

#[derive(Clone)]
struct JamWindow {
    start: u64,
    end: u64,
    targets: Vec<usize>,
}

#[derive(Clone)]
struct Impulse {
    step: u64,
    targets: Vec<usize>,
    increment_mv: f64,
}

/// Steps a [`SpikingNetwork`] forward one `dt` at a time.
///
/// Order inside a step: flooding impulses, Euler update plus synaptic
/// jumps from the previous step's spikes, jamming clamp, threshold check.
#[derive(Clone)]
pub struct Simulator<'a> {
    net: &'a SpikingNetwork,
    clock: RunClock,
    step: u64,
    states: Vec<NeuronState>,
    pending: Vec<f64>,
    clamped: Vec<bool>,
    jams: Vec<JamWindow>,
    impulses: Vec<Impulse>,
    last_impulses: Vec<ImpulseRecord>,
    fired: Vec<usize>,
}

impl<'a> Simulator<'a> {
    pub fn new(net: &'a SpikingNetwork, attacks: &[AttackPlan], clock: RunClock) -> Result<Self> {
        clock.validate()?;
        let n = net.n_neurons();
        let mut sim = Simulator {
            net,
            clock,
            step: 0,
            states: net.initial_states().to_vec(),
            pending: vec![0.0; n],
            clamped: vec![false; n],
            jams: Vec::new(),
            impulses: Vec::new(),
            last_impulses: Vec::new(),
            fired: Vec::new(),
        };
        sim.set_attacks(attacks)?;
        Ok(sim)
    }

    /// Replaces the attack list. Attacks may not start before the current
    /// step.
    pub fn set_attacks(&mut self, attacks: &[AttackPlan]) -> Result<()> {
        let n = self.states.len();
        let clock = self.clock;
        let mut jams = Vec::new();
        let mut impulses = Vec::new();
        for plan in attacks {
            plan.validate()?;
            if let Some(&bad) = plan.targets().iter().find(|&&t| t >= n) {
                return Err(Error::range("snn", "targets", format!("neuron {bad} >= {n}")));
            }
            let start = clock.step_of(plan.t_attk_ms(), "t_attk")?;
            if start < self.step {
                return Err(Error::range(
                    "snn",
                    "t_attk",
                    format!("{} ms is before the simulator's current time {} ms", plan.t_attk_ms(), self.time_ms()),
                ));
            }
            match plan {
                AttackPlan::Jam {
                    targets,
                    t_attk_ms,
                    t_pulse_ms,
                } => jams.push(JamWindow {
                    start,
                    end: clock.step_of(t_attk_ms + t_pulse_ms, "t_pulse")?,
                    targets: targets.clone(),
                }),
                AttackPlan::Flo {
                    targets, increment_mv, ..
                } => impulses.push(Impulse {
                    step: start,
                    targets: targets.clone(),
                    increment_mv: *increment_mv,
                }),
            }
        }
        self.jams = jams;
        self.impulses = impulses;
        Ok(())
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    pub fn time_ms(&self) -> f64 {
        self.step as f64 * self.clock.dt_ms
    }

    pub fn states(&self) -> &[NeuronState] {
        &self.states
    }

    pub fn voltages(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.v).collect()
    }

    /// Impulses applied during the most recent step.
    pub fn last_impulses(&self) -> &[ImpulseRecord] {
        &self.last_impulses
    }

    /// Advances one step; returns the neurons that fired in it.
    pub fn step(&mut self, currents: &[f64]) -> Result<&[usize]> {
        let n = self.states.len();
        if currents.len() != n {
            return Err(Error::Shape {
                what: "currents",
                expected: n.to_string(),
                got: currents.len().to_string(),
            });
        }
        let k = self.step;
        let p = *self.net.params();
        let dt = self.clock.dt_ms;

        self.last_impulses.clear();
        for imp in self.impulses.iter().filter(|i| i.step == k) {
            for &t in &imp.targets {
                let v_before = self.states[t].v;
                self.states[t].v += imp.increment_mv;
                self.last_impulses.push(ImpulseRecord {
                    neuron: t,
                    v_before,
                    v_after: self.states[t].v,
                });
            }
        }

        self.clamped.iter_mut().for_each(|c| *c = false);
        for jam in self.jams.iter().filter(|j| j.start <= k && k < j.end) {
            for &t in &jam.targets {
                self.clamped[t] = true;
            }
        }

        self.fired.clear();
        for i in 0..n {
            let s = &mut self.states[i];
            let (dv, du) = p.derivatives(s.v, s.u, currents[i]);
            s.v += dt * dv + self.pending[i];
            s.u += dt * du;
            self.pending[i] = 0.0;
            if !(s.v.is_finite() && s.u.is_finite()) {
                return Err(Error::Divergence {
                    neuron: i,
                    time_ms: k as f64 * dt,
                });
            }
            if self.clamped[i] {
                s.v = p.v_min;
            } else if s.v >= p.v_peak {
                s.v = p.c;
                s.u += p.d;
                self.fired.push(i);
            }
        }
        for &pre in &self.fired {
            for &(post, w) in self.net.fanout(pre) {
                self.pending[post] += w;
            }
        }
        self.step += 1;
        Ok(&self.fired)
    }
}

/// `[start, end)` step ranges of the schedule's segments, clipped to the
/// clock window.
fn segment_steps(schedule: &StimulusSchedule, clock: &RunClock) -> Result<Vec<(u64, u64)>> {
    let total = clock.steps();
    let mut bounds = Vec::with_capacity(schedule.segments.len());
    let mut start = 0u64;
    for seg in &schedule.segments {
        if start >= total {
            break;
        }
        let len = whole_ratio(seg.duration_ms, clock.dt_ms)
            .ok_or_else(|| Error::range("snn", "segment", format!("{} ms is not a multiple of dt", seg.duration_ms)))?;
        let end = (start + len).min(total);
        bounds.push((start, end));
        start = end;
    }
    if start < total {
        return Err(Error::range(
            "snn",
            "stimulus",
            format!("covers {} ms of a {} ms window", schedule.duration_ms(), clock.t_win_ms),
        ));
    }
    Ok(bounds)
}

/// Steps `sim` up to (not including) step `until`, collecting spikes.
fn advance(
    sim: &mut Simulator<'_>,
    schedule: &StimulusSchedule,
    bounds: &[(u64, u64)],
    until: u64,
    events: &mut Vec<SpikeEvent>,
) -> Result<()> {
    for (seg, &(start, end)) in schedule.segments.iter().zip(bounds) {
        let from = sim.current_step().max(start);
        for step in from..end.min(until) {
            for &neuron in sim.step(&seg.currents)? {
                events.push(SpikeEvent { step, neuron });
            }
        }
    }
    Ok(())
}

/// Simulates the whole clock window and returns every spike.
///
/// The schedule must cover the window; segments past its end are ignored.
pub fn run(net: &SpikingNetwork, schedule: &StimulusSchedule, attacks: &[AttackPlan], clock: RunClock) -> Result<SpikeRecord> {
    let bounds = segment_steps(schedule, &clock)?;
    let mut sim = Simulator::new(net, attacks, clock)?;
    let mut events = Vec::new();
    advance(&mut sim, schedule, &bounds, clock.steps(), &mut events)?;
    SpikeRecord::new(events, clock.dt_ms, clock.steps(), net.n_neurons())
}

/// Attack-free run with simulator snapshots, from which attacked runs
/// resume instead of recomputing the shared prefix.
///
/// Before its first attack step an attacked run is bitwise identical to
/// the baseline, so resuming from the latest earlier snapshot gives the
/// same record as [`run`].
pub struct Baseline<'a> {
    schedule: StimulusSchedule,
    bounds: Vec<(u64, u64)>,
    clock: RunClock,
    record: SpikeRecord,
    snapshots: Vec<Simulator<'a>>,
}

impl<'a> Baseline<'a> {
    pub fn new(net: &'a SpikingNetwork, schedule: StimulusSchedule, clock: RunClock, snapshot_steps: &[u64]) -> Result<Self> {
        let bounds = segment_steps(&schedule, &clock)?;
        let mut sim = Simulator::new(net, &[], clock)?;
        let mut steps: Vec<u64> = snapshot_steps.iter().copied().filter(|&s| s < clock.steps()).collect();
        steps.sort_unstable();
        steps.dedup();
        let mut events = Vec::new();
        let mut snapshots = vec![sim.clone()];
        for s in steps {
            advance(&mut sim, &schedule, &bounds, s, &mut events)?;
            if s > 0 {
                snapshots.push(sim.clone());
            }
        }
        advance(&mut sim, &schedule, &bounds, clock.steps(), &mut events)?;
        let record = SpikeRecord::new(events, clock.dt_ms, clock.steps(), net.n_neurons())?;
        Ok(Baseline {
            schedule,
            bounds,
            clock,
            record,
            snapshots,
        })
    }

    pub fn record(&self) -> &SpikeRecord {
        &self.record
    }

    pub fn clock(&self) -> RunClock {
        self.clock
    }

    pub fn run_attacked(&self, attacks: &[AttackPlan]) -> Result<SpikeRecord> {
        let mut first = u64::MAX;
        for plan in attacks {
            first = first.min(self.clock.step_of(plan.t_attk_ms(), "t_attk")?);
        }
        let snap = self
            .snapshots
            .iter()
            .rev()
            .find(|s| s.current_step() <= first)
            .expect("snapshot at step 0");
        let mut sim = snap.clone();
        sim.set_attacks(attacks)?;
        let resume = sim.current_step();
        let mut events: Vec<SpikeEvent> = self.record.events().iter().take_while(|e| e.step < resume).copied().collect();
        advance(&mut sim, &self.schedule, &self.bounds, self.clock.steps(), &mut events)?;
        SpikeRecord::new(events, self.clock.dt_ms, self.clock.steps(), self.record.n_neurons())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::count_spikes;
    use crate::snn::{make_flo_plan, IzhikevichParams, Synapse, NEURON_COUNT};

    fn isolated(n: usize) -> SpikingNetwork {
        SpikingNetwork::from_synapses(IzhikevichParams::default(), n, vec![], 1.0).unwrap()
    }

    fn clock(ms: f64, dt: f64) -> RunClock {
        RunClock::new(ms, dt).unwrap()
    }

    #[test]
    fn silent_without_input() {
        // With I = 0 the start state (-65, -13) has dv/dt = -3 and
        // settles at the stable fixed point near -70 mV.
        let net = isolated(3);
        let rec = run(&net, &StimulusSchedule::constant(vec![0.0; 3], 1000.0), &[], clock(1000.0, 0.01)).unwrap();
        assert_eq!(count_spikes(&rec), 0);
    }

    #[test]
    fn reset_after_spike() {
        let net = isolated(1);
        let mut sim = Simulator::new(&net, &[], clock(1000.0, 0.1)).unwrap();
        loop {
            let u_before = sim.states()[0].u;
            let fired = sim.step(&[10.0]).unwrap().to_vec();
            if !fired.is_empty() {
                let s = sim.states()[0];
                assert_eq!(s.v, -65.0);
                // u advanced by one Euler step, then jumped by d = 8.
                assert!((s.u - u_before - 8.0).abs() < 0.1, "{u_before} -> {}", s.u);
                break;
            }
            assert!(sim.current_step() < 10_000);
        }
    }

    #[test]
    fn stronger_current_fires_more() {
        let count = |i: f64| {
            let rec = run(&isolated(1), &StimulusSchedule::constant(vec![i], 1000.0), &[], clock(1000.0, 0.1)).unwrap();
            count_spikes(&rec)
        };
        let (lo, hi) = (count(10.0), count(15.0));
        assert!(lo > 5 && hi > lo, "{lo} {hi}");
    }

    #[test]
    fn halving_dt_barely_changes_spike_count() {
        let count = |dt: f64| {
            let rec = run(&isolated(1), &StimulusSchedule::constant(vec![10.0], 1000.0), &[], clock(1000.0, dt)).unwrap();
            count_spikes(&rec) as i64
        };
        assert!((count(0.1) - count(0.05)).abs() <= 2);
    }

    #[test]
    fn jam_clamps_targets_only() {
        let net = isolated(4);
        let jam = AttackPlan::jam(vec![1, 3], 100.0, 500.0).unwrap();
        let mut sim = Simulator::new(&net, &[jam], clock(1000.0, 0.1)).unwrap();
        let mut spikes = [0usize; 4];
        let mut inside = [0usize; 4];
        for _ in 0..10_000 {
            let k = sim.current_step();
            let fired = sim.step(&[10.0; 4]).unwrap().to_vec();
            for &i in &fired {
                spikes[i] += 1;
                if (1000..6000).contains(&k) {
                    inside[i] += 1;
                }
            }
            if (1000..6000).contains(&k) {
                assert_eq!(sim.states()[1].v, -65.0);
                assert_eq!(sim.states()[3].v, -65.0);
            }
        }
        assert_eq!((inside[1], inside[3]), (0, 0));
        assert!(inside[0] > 0 && inside[2] > 0);
        assert_eq!(spikes[0], spikes[2]);
        assert!(spikes[1] < spikes[0]);
    }

    #[test]
    fn flo_is_a_single_local_jump() {
        let net = isolated(3);
        let c = clock(2000.0, 0.1);
        let flo = make_flo_plan(vec![1], 1, 20.0, &c).unwrap();
        let mut plain = Simulator::new(&net, &[], c).unwrap();
        let mut hit = Simulator::new(&net, &[flo], c).unwrap();
        for _ in 0..500 {
            plain.step(&[0.0; 3]).unwrap();
            hit.step(&[0.0; 3]).unwrap();
            assert!(hit.last_impulses().is_empty());
        }
        let before = hit.states()[1].v;
        hit.step(&[0.0; 3]).unwrap();
        let rec = hit.last_impulses()[0];
        assert_eq!(rec.neuron, 1);
        assert_eq!(rec.v_before, before);
        assert_eq!(rec.v_after, before + 20.0);
        plain.step(&[0.0; 3]).unwrap();
        assert_eq!(hit.states()[0], plain.states()[0]);
        assert_eq!(hit.states()[2], plain.states()[2]);
        assert_ne!(hit.states()[1], plain.states()[1]);
    }

    #[test]
    fn synaptic_jump_lands_next_step() {
        let syn = vec![Synapse {
            pre: 0,
            post: 1,
            weight: 5.0,
        }];
        let net = SpikingNetwork::from_synapses(IzhikevichParams::default(), 2, syn, 1.0).unwrap();
        let mut with = Simulator::new(&net, &[], clock(1000.0, 0.1)).unwrap();
        let iso = isolated(2);
        let mut without = Simulator::new(&iso, &[], clock(1000.0, 0.1)).unwrap();
        loop {
            let fired = !with.step(&[10.0, 0.0]).unwrap().is_empty();
            without.step(&[10.0, 0.0]).unwrap();
            assert_eq!(with.states()[1], without.states()[1]);
            if fired {
                break;
            }
        }
        let v_iso = without.states()[1].v;
        with.step(&[10.0, 0.0]).unwrap();
        without.step(&[10.0, 0.0]).unwrap();
        let diff = with.states()[1].v - without.states()[1].v;
        assert!((diff - 5.0).abs() < 1e-9, "{diff} from {v_iso}");
    }

    #[test]
    fn deterministic_and_divergence_is_reported() {
        let net = isolated(NEURON_COUNT);
        let s = StimulusSchedule::constant(vec![12.0; NEURON_COUNT], 200.0);
        let a = run(&net, &s, &[], clock(200.0, 0.1)).unwrap();
        let b = run(&net, &s, &[], clock(200.0, 0.1)).unwrap();
        assert_eq!(a, b);
        let huge = StimulusSchedule::constant(vec![f64::INFINITY; 1], 10.0);
        assert!(matches!(
            run(&isolated(1), &huge, &[], clock(10.0, 0.1)),
            Err(Error::Divergence { neuron: 0, .. })
        ));
    }

    #[test]
    fn resumed_runs_match_full_runs() {
        let syn = (0..20)
            .map(|i| Synapse {
                pre: i,
                post: 20 + i % 5,
                weight: if i % 3 == 0 { -4.0 } else { 6.0 },
            })
            .collect();
        let net = SpikingNetwork::from_synapses(IzhikevichParams::default(), 25, syn, 1.0).unwrap();
        let c = clock(3000.0, 0.1);
        let sched = StimulusSchedule {
            segments: (0..3)
                .map(|k| crate::snn::Segment {
                    duration_ms: 1000.0,
                    currents: (0..25).map(|i| if (i + k) % 4 == 0 { 15.0 } else { 10.0 }).collect(),
                })
                .collect(),
        };
        let base = Baseline::new(&net, sched.clone(), c, &[500, 10_500, 20_500]).unwrap();
        assert_eq!(base.record(), &run(&net, &sched, &[], c).unwrap());
        let plans = [
            vec![make_flo_plan(vec![1, 4, 9], 2, 40.0, &c).unwrap()],
            vec![make_flo_plan(vec![0, 2], 1, 60.0, &c).unwrap()],
            vec![crate::snn::make_jam_plan(vec![3, 21], 1, 2, &c).unwrap()],
            vec![AttackPlan::flo(vec![7], 12.3, 20.0).unwrap()],
            vec![],
        ];
        for attacks in plans {
            assert_eq!(base.run_attacked(&attacks).unwrap(), run(&net, &sched, &attacks, c).unwrap());
        }
    }

    #[test]
    fn attacks_cannot_start_in_the_past() {
        let net = isolated(2);
        let mut sim = Simulator::new(&net, &[], clock(100.0, 0.1)).unwrap();
        for _ in 0..10 {
            sim.step(&[10.0, 10.0]).unwrap();
        }
        assert!(sim.set_attacks(&[AttackPlan::flo(vec![0], 0.5, 10.0).unwrap()]).is_err());
        assert!(sim.set_attacks(&[AttackPlan::flo(vec![0], 1.0, 10.0).unwrap()]).is_ok());
    }

    #[test]
    fn short_schedule_rejected() {
        let s = StimulusSchedule::constant(vec![10.0], 500.0);
        assert!(run(&isolated(1), &s, &[], clock(1000.0, 0.1)).is_err());
    }
}
