//! Random small configurations for engine-versus-oracle checks.
//!
//! Events are plain data over a few integer channels, so a configuration can
//! be printed, shrunk by hand and rebuilt. Continuations are pure functions of
//! the value they receive.

use rand::Rng;

use super::{spawn_script, Scenario};
use crate::event::{always_evt, choose_evt, never_evt, new_channel, recv_evt, send_evt, then_evt, Channel, Event};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenEvent {
    Always(i64),
    Never,
    /// Sends the value and then returns it.
    Send(usize, i64),
    Recv(usize),
    Choose(Box<GenEvent>, Box<GenEvent>),
    Then(Box<GenEvent>, GenCont),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GenCont {
    Add(i64),
    /// Forwards the value on a channel, then returns it.
    Forward(usize),
    /// Receives another value and returns the sum.
    RecvAdd(usize),
    /// Passes values `>= t` through; otherwise `never`.
    AtLeast(i64),
    Const(Box<GenEvent>),
}

impl GenEvent {
    pub fn depth(&self) -> usize {
        match self {
            GenEvent::Choose(l, r) => 1 + l.depth().max(r.depth()),
            GenEvent::Then(e, k) => 1 + e.depth().max(k.depth()),
            _ => 1,
        }
    }

    /// Communication sites in the tree, over all branches.
    pub fn comm_sites(&self) -> usize {
        match self {
            GenEvent::Send(..) | GenEvent::Recv(_) => 1,
            GenEvent::Always(_) | GenEvent::Never => 0,
            GenEvent::Choose(l, r) => l.comm_sites() + r.comm_sites(),
            GenEvent::Then(e, k) => e.comm_sites() + k.comm_sites(),
        }
    }

    pub fn build(&self, chans: &[Channel<i64>]) -> Event<i64> {
        match self {
            GenEvent::Always(v) => always_evt(*v),
            GenEvent::Never => never_evt(),
            GenEvent::Send(c, v) => {
                let v = *v;
                then_evt(send_evt(chans[*c], v), move |()| always_evt(v))
            }
            GenEvent::Recv(c) => recv_evt(chans[*c]),
            GenEvent::Choose(l, r) => choose_evt(l.build(chans), r.build(chans)),
            GenEvent::Then(e, k) => k.attach(e.build(chans), chans),
        }
    }
}

impl GenCont {
    fn depth(&self) -> usize {
        match self {
            GenCont::Const(e) => e.depth(),
            _ => 1,
        }
    }

    fn comm_sites(&self) -> usize {
        match self {
            GenCont::Forward(_) | GenCont::RecvAdd(_) => 1,
            GenCont::Add(_) | GenCont::AtLeast(_) => 0,
            GenCont::Const(e) => e.comm_sites(),
        }
    }

    fn attach(&self, e: Event<i64>, chans: &[Channel<i64>]) -> Event<i64> {
        match self {
            GenCont::Add(d) => {
                let d = *d;
                then_evt(e, move |x: i64| always_evt(x + d))
            }
            GenCont::Forward(c) => {
                let c = chans[*c];
                then_evt(e, move |x: i64| then_evt(send_evt(c, x), move |()| always_evt(x)))
            }
            GenCont::RecvAdd(c) => {
                let c = chans[*c];
                then_evt(e, move |x: i64| then_evt(recv_evt(c), move |y: i64| always_evt(x + y)))
            }
            GenCont::AtLeast(t) => {
                let t = *t;
                then_evt(e, move |x: i64| if x >= t { always_evt(x) } else { never_evt() })
            }
            GenCont::Const(next) => {
                let next = next.build(chans);
                then_evt(e, move |_: i64| next.clone())
            }
        }
    }
}

/// Threads, each a sequence of synchronizations, over `channels` channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GenConfig {
    pub channels: usize,
    pub threads: Vec<Vec<GenEvent>>,
}

pub const MAX_DEPTH: usize = 3;
pub const MAX_THREADS: usize = 4;
pub const MAX_TOTAL_COMMS: usize = 6;
pub const MAX_THREAD_COMMS: usize = 4;

impl GenConfig {
    pub fn comm_sites(&self) -> usize {
        self.threads.iter().flatten().map(GenEvent::comm_sites).sum()
    }

    pub fn within_bounds(&self) -> bool {
        self.threads.len() <= MAX_THREADS
            && self.comm_sites() <= MAX_TOTAL_COMMS
            && self.threads.iter().all(|t| {
                t.iter().map(GenEvent::comm_sites).sum::<usize>() <= MAX_THREAD_COMMS
                    && t.iter().all(|e| e.depth() <= MAX_DEPTH)
            })
    }

    /// Thread `i` runs as script task `t{i}`.
    pub fn scenario(&self) -> Scenario {
        let cfg = self.clone();
        Scenario::new("generated", move || {
            let chans: Vec<Channel<i64>> = (0..cfg.channels).map(|_| new_channel()).collect();
            for (i, evs) in cfg.threads.iter().enumerate() {
                spawn_script(format!("t{i}"), evs.iter().map(|e| e.build(&chans).erase()).collect());
            }
        })
    }
}

struct Budget {
    left: usize,
    channels: usize,
}

fn gen_event<R: Rng>(rng: &mut R, depth: usize, b: &mut Budget) -> GenEvent {
    let leaf = depth <= 1 || rng.gen_bool(0.35);
    if leaf {
        let comm = b.left > 0 && rng.gen_bool(0.8);
        if comm {
            b.left -= 1;
            let c = rng.gen_range(0..b.channels);
            if rng.gen_bool(0.5) {
                GenEvent::Send(c, rng.gen_range(0..4))
            } else {
                GenEvent::Recv(c)
            }
        } else if rng.gen_bool(0.85) {
            GenEvent::Always(rng.gen_range(0..4))
        } else {
            GenEvent::Never
        }
    } else if rng.gen_bool(0.5) {
        let l = gen_event(rng, depth - 1, b);
        let r = gen_event(rng, depth - 1, b);
        GenEvent::Choose(Box::new(l), Box::new(r))
    } else {
        let e = gen_event(rng, depth - 1, b);
        let k = gen_cont(rng, depth - 1, b);
        GenEvent::Then(Box::new(e), k)
    }
}

fn gen_cont<R: Rng>(rng: &mut R, depth: usize, b: &mut Budget) -> GenCont {
    match rng.gen_range(0..5) {
        0 => GenCont::Add(rng.gen_range(1..3)),
        1 => GenCont::AtLeast(rng.gen_range(0..4)),
        2 | 3 if b.left > 0 => {
            b.left -= 1;
            let c = rng.gen_range(0..b.channels);
            if rng.gen_bool(0.5) {
                GenCont::Forward(c)
            } else {
                GenCont::RecvAdd(c)
            }
        }
        _ => GenCont::Const(Box::new(gen_event(rng, depth, b))),
    }
}

/// A random configuration within the generator bounds: up to four threads
/// of one or two synchronizations, event depth at most three, at most six
/// communication sites overall and four per thread.
pub fn random_config<R: Rng>(rng: &mut R) -> GenConfig {
    let channels = rng.gen_range(1..=2);
    let n_threads = rng.gen_range(2..=MAX_THREADS);
    let mut total = MAX_TOTAL_COMMS;
    let mut threads = Vec::with_capacity(n_threads);
    for _ in 0..n_threads {
        let mut b = Budget {
            left: total.min(MAX_THREAD_COMMS),
            channels,
        };
        let start = b.left;
        let syncs = rng.gen_range(1..=2);
        let evs: Vec<GenEvent> = (0..syncs)
            .map(|_| {
                let depth = rng.gen_range(1..=MAX_DEPTH);
                gen_event(rng, depth, &mut b)
            })
            .collect();
        total -= start - b.left;
        threads.push(evs);
    }
    GenConfig { channels, threads }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn generated_configs_respect_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let c = random_config(&mut rng);
            assert!(c.within_bounds(), "{c:?}");
        }
    }
}
