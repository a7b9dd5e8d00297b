//! Deterministic discrete-event broadcast network.
//!
//! Events are dispatched in `(due, seq)` order, where `seq` is the insertion
//! counter, so runs are a pure function of the inputs and the RNG seed. The
//! medium is one shared broadcast channel with network-wide latency, jitter
//! and loss parameters.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::identity::IvTpId;
use crate::ledger::TimeFlag;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("sender {0} is not attached to the network")]
    UnknownSender(IvTpId),
    #[error("time {at} is before the current clock {clock}")]
    PastDeadline { at: TimeFlag, clock: TimeFlag },
    #[error("drop probability {0} outside [0, 1]")]
    BadProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub base_latency_ms: u64,
    pub jitter_ms: u64,
    pub drop_probability: f64,
}

impl LinkModel {
    pub fn new(base_latency_ms: u64, jitter_ms: u64, drop_probability: f64) -> Result<Self, NetError> {
        if !(0.0..=1.0).contains(&drop_probability) {
            return Err(NetError::BadProbability(drop_probability));
        }
        Ok(Self {
            base_latency_ms,
            jitter_ms,
            drop_probability,
        })
    }

    pub fn ideal() -> Self {
        Self {
            base_latency_ms: 0,
            jitter_ms: 0,
            drop_probability: 0.0,
        }
    }
}

/// Seeded ChaCha8 stream; identical seeds give identical draws.
#[derive(Debug, Clone)]
pub struct SimRng(ChaCha8Rng);

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && (p >= 1.0 || self.0.gen::<f64>() < p)
    }

    pub fn up_to(&mut self, max: u64) -> u64 {
        if max == 0 {
            0
        } else {
            self.0.gen_range(0..=max)
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.gen()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimerId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind<M, T> {
    Deliver {
        from: IvTpId,
        to: IvTpId,
        sent_at: TimeFlag,
        msg: M,
    },
    TimerFire {
        owner: IvTpId,
        timer: TimerId,
        tag: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent<M, T> {
    pub due: TimeFlag,
    pub seq: u64,
    pub kind: EventKind<M, T>,
}

impl<M, T> SimEvent<M, T> {
    pub fn target(&self) -> IvTpId {
        match &self.kind {
            EventKind::Deliver { to, .. } => *to,
            EventKind::TimerFire { owner, .. } => *owner,
        }
    }
}

struct Queued<M, T>(SimEvent<M, T>);

impl<M, T> PartialEq for Queued<M, T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<M, T> Eq for Queued<M, T> {}
impl<M, T> PartialOrd for Queued<M, T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M, T> Ord for Queued<M, T> {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.0.due, self.0.seq).cmp(&(other.0.due, other.0.seq))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledDelivery {
    pub to: IvTpId,
    pub due: TimeFlag,
}

/// Summary of one dispatched event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dispatched {
    pub due: TimeFlag,
    pub seq: u64,
    pub target: IvTpId,
    pub from: Option<IvTpId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub broadcasts: u64,
    pub scheduled: u64,
    pub lost: u64,
}

pub trait Handler<M, T> {
    fn on_event(&mut self, net: &mut Network<M, T>, event: SimEvent<M, T>);

    /// Called once all events due at `now` have been dispatched.
    fn on_quiescent(&mut self, _net: &mut Network<M, T>, _now: TimeFlag) {}
}

type DropFilter<M> = Box<dyn FnMut(&IvTpId, &IvTpId, &M) -> bool>;

pub struct Network<M, T> {
    clock: TimeFlag,
    seq: u64,
    next_timer: u64,
    queue: BinaryHeap<Reverse<Queued<M, T>>>,
    cancelled: HashSet<TimerId>,
    participants: BTreeSet<IvTpId>,
    link: LinkModel,
    rng: SimRng,
    stats: NetStats,
    drop_filter: Option<DropFilter<M>>,
}

impl<M: Clone, T> Network<M, T> {
    pub fn new(link: LinkModel, seed: u64) -> Self {
        Self {
            clock: TimeFlag(0),
            seq: 0,
            next_timer: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            participants: BTreeSet::new(),
            link,
            rng: SimRng::new(seed),
            stats: NetStats::default(),
            drop_filter: None,
        }
    }

    pub fn now(&self) -> TimeFlag {
        self.clock
    }

    pub fn stats(&self) -> NetStats {
        self.stats
    }

    pub fn link(&self) -> LinkModel {
        self.link
    }

    pub fn join(&mut self, id: IvTpId) {
        self.participants.insert(id);
    }

    pub fn participants(&self) -> &BTreeSet<IvTpId> {
        &self.participants
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Deterministic fault injection: deliveries for which `filter(from, to,
    /// msg)` returns true are lost, in addition to random loss.
    pub fn set_drop_filter(&mut self, filter: impl FnMut(&IvTpId, &IvTpId, &M) -> bool + 'static) {
        self.drop_filter = Some(Box::new(filter));
    }

    fn push(&mut self, due: TimeFlag, kind: EventKind<M, T>) -> u64 {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Queued(SimEvent { due, seq, kind })));
        seq
    }

    /// Schedules one delivery per other participant, unless lost. The sender
    /// never hears its own frame.
    pub fn broadcast(
        &mut self,
        from: IvTpId,
        msg: M,
        at: TimeFlag,
    ) -> Result<Vec<ScheduledDelivery>, NetError> {
        let receivers: Vec<IvTpId> = self.participants.iter().copied().collect();
        self.send(from, receivers, msg, at)
    }

    /// Like [`broadcast`](Self::broadcast), restricted to `to`. Unknown
    /// receivers are skipped.
    pub fn multicast(
        &mut self,
        from: IvTpId,
        to: &BTreeSet<IvTpId>,
        msg: M,
        at: TimeFlag,
    ) -> Result<Vec<ScheduledDelivery>, NetError> {
        let receivers: Vec<IvTpId> = to
            .iter()
            .copied()
            .filter(|p| self.participants.contains(p))
            .collect();
        self.send(from, receivers, msg, at)
    }

    fn send(
        &mut self,
        from: IvTpId,
        receivers: Vec<IvTpId>,
        msg: M,
        at: TimeFlag,
    ) -> Result<Vec<ScheduledDelivery>, NetError> {
        if !self.participants.contains(&from) {
            return Err(NetError::UnknownSender(from));
        }
        if at < self.clock {
            return Err(NetError::PastDeadline {
                at,
                clock: self.clock,
            });
        }
        self.stats.broadcasts += 1;
        let mut out = Vec::new();
        for to in receivers.into_iter().filter(|p| *p != from) {
            let random_loss = self.rng.chance(self.link.drop_probability);
            let injected = self
                .drop_filter
                .as_mut()
                .map(|f| f(&from, &to, &msg))
                .unwrap_or(false);
            if random_loss || injected {
                self.stats.lost += 1;
                continue;
            }
            let due = at.plus(self.link.base_latency_ms + self.rng.up_to(self.link.jitter_ms));
            self.push(
                due,
                EventKind::Deliver {
                    from,
                    to,
                    sent_at: at,
                    msg: msg.clone(),
                },
            );
            self.stats.scheduled += 1;
            out.push(ScheduledDelivery { to, due });
        }
        Ok(out)
    }

    pub fn set_timer(&mut self, owner: IvTpId, fire_at: TimeFlag, tag: T) -> Result<TimerId, NetError> {
        if fire_at < self.clock {
            return Err(NetError::PastDeadline {
                at: fire_at,
                clock: self.clock,
            });
        }
        let timer = TimerId(self.next_timer);
        self.next_timer += 1;
        self.push(fire_at, EventKind::TimerFire { owner, timer, tag });
        Ok(timer)
    }

    pub fn cancel_timer(&mut self, timer: TimerId) -> bool {
        self.cancelled.insert(timer)
    }

    fn peek_due(&self) -> Option<TimeFlag> {
        self.queue.peek().map(|Reverse(Queued(e))| e.due)
    }

    /// Dispatches every event due at or before `t_end`, then advances the
    /// clock to `t_end`.
    pub fn run_until<H: Handler<M, T>>(&mut self, t_end: TimeFlag, handler: &mut H) -> Vec<Dispatched> {
        let mut trace = Vec::new();
        let mut dirty = false;
        loop {
            match self.peek_due() {
                Some(due) if due <= t_end => {
                    if due > self.clock {
                        if dirty {
                            dirty = false;
                            handler.on_quiescent(self, self.clock);
                            continue;
                        }
                        self.clock = due;
                    }
                    let Reverse(Queued(ev)) = self.queue.pop().expect("peeked");
                    if let EventKind::TimerFire { timer, .. } = &ev.kind {
                        if self.cancelled.remove(timer) {
                            continue;
                        }
                    }
                    trace.push(Dispatched {
                        due: ev.due,
                        seq: ev.seq,
                        target: ev.target(),
                        from: match &ev.kind {
                            EventKind::Deliver { from, .. } => Some(*from),
                            EventKind::TimerFire { .. } => None,
                        },
                    });
                    dirty = true;
                    handler.on_event(self, ev);
                }
                _ => {
                    if dirty {
                        dirty = false;
                        handler.on_quiescent(self, self.clock);
                        continue;
                    }
                    break;
                }
            }
        }
        self.clock = self.clock.max(t_end);
        trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::sha256;

    fn ids(n: u8) -> Vec<IvTpId> {
        (0..n).map(|i| IvTpId(sha256(&[&[i]]))).collect()
    }

    fn net(n: u8, link: LinkModel, seed: u64) -> (Network<u32, &'static str>, Vec<IvTpId>) {
        let mut net = Network::new(link, seed);
        let ids = ids(n);
        ids.iter().for_each(|id| net.join(*id));
        (net, ids)
    }

    #[derive(Default)]
    struct Log(Vec<(u64, u64, String)>);

    impl Handler<u32, &'static str> for Log {
        fn on_event(&mut self, _: &mut Network<u32, &'static str>, ev: SimEvent<u32, &'static str>) {
            let what = match ev.kind {
                EventKind::Deliver { msg, .. } => format!("msg{msg}"),
                EventKind::TimerFire { tag, .. } => tag.to_string(),
            };
            self.0.push((ev.due.0, ev.seq, what));
        }
    }

    #[test]
    fn ideal_broadcast_reaches_everyone_else_at_send_time() {
        let (mut net, ids) = net(5, LinkModel::ideal(), 0);
        let out = net.broadcast(ids[0], 7, TimeFlag(1000)).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|d| d.due == TimeFlag(1000) && d.to != ids[0]));
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let (mut net, ids) = net(5, LinkModel::new(0, 0, 1.0).unwrap(), 3);
        assert!(net.broadcast(ids[0], 7, TimeFlag(0)).unwrap().is_empty());
        assert_eq!(net.stats().lost, 4);
    }

    #[test]
    fn fixed_latency_adds_exactly() {
        let (mut net, ids) = net(3, LinkModel::new(10, 0, 0.0).unwrap(), 0);
        let out = net.broadcast(ids[1], 1, TimeFlag(5)).unwrap();
        assert!(out.iter().all(|d| d.due == TimeFlag(15)));
    }

    #[test]
    fn unknown_sender_and_bad_probability() {
        let (mut net, _) = net(2, LinkModel::ideal(), 0);
        let stranger = IvTpId(sha256(&[b"x"]));
        assert_eq!(
            net.broadcast(stranger, 1, TimeFlag(0)),
            Err(NetError::UnknownSender(stranger))
        );
        assert!(LinkModel::new(0, 0, 1.5).is_err());
    }

    #[test]
    fn empty_queue_advances_clock() {
        let (mut net, _) = net(2, LinkModel::ideal(), 0);
        let trace = net.run_until(TimeFlag(500), &mut Log::default());
        assert!(trace.is_empty());
        assert_eq!(net.now(), TimeFlag(500));
    }

    #[test]
    fn same_instant_events_dispatch_in_insertion_order() {
        let (mut net, ids) = net(2, LinkModel::ideal(), 0);
        net.set_timer(ids[0], TimeFlag(10), "b").unwrap();
        net.set_timer(ids[0], TimeFlag(10), "c").unwrap();
        net.set_timer(ids[1], TimeFlag(5), "a").unwrap();
        let mut log = Log::default();
        net.run_until(TimeFlag(20), &mut log);
        let order: Vec<&str> = log.0.iter().map(|e| e.2.as_str()).collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    #[test]
    fn timer_now_fires_before_later_events_and_cancel_works() {
        let (mut net, ids) = net(2, LinkModel::new(1, 0, 0.0).unwrap(), 0);
        net.broadcast(ids[0], 9, TimeFlag(0)).unwrap();
        net.set_timer(ids[0], TimeFlag(0), "now").unwrap();
        let dead = net.set_timer(ids[0], TimeFlag(0), "dead").unwrap();
        assert!(net.cancel_timer(dead));
        let mut log = Log::default();
        net.run_until(TimeFlag(5), &mut log);
        let order: Vec<&str> = log.0.iter().map(|e| e.2.as_str()).collect();
        assert_eq!(order, ["now", "msg9"]);
        assert!(matches!(
            net.set_timer(ids[0], TimeFlag(1), "past"),
            Err(NetError::PastDeadline { .. })
        ));
    }

    #[test]
    fn quiescent_hook_runs_once_per_busy_instant() {
        struct Q(Vec<u64>);
        impl Handler<u32, &'static str> for Q {
            fn on_event(&mut self, _: &mut Network<u32, &'static str>, _: SimEvent<u32, &'static str>) {}
            fn on_quiescent(&mut self, _: &mut Network<u32, &'static str>, now: TimeFlag) {
                self.0.push(now.0);
            }
        }
        let (mut net, ids) = net(2, LinkModel::ideal(), 0);
        for t in [3, 3, 7] {
            net.set_timer(ids[0], TimeFlag(t), "t").unwrap();
        }
        let mut q = Q(vec![]);
        net.run_until(TimeFlag(10), &mut q);
        assert_eq!(q.0, vec![3, 7]);
    }

    #[test]
    fn jittered_runs_are_seed_deterministic_and_causal() {
        let run = |seed| {
            let (mut net, ids) = net(6, LinkModel::new(2, 9, 0.3).unwrap(), seed);
            for (i, id) in ids.iter().enumerate() {
                net.broadcast(*id, i as u32, TimeFlag(i as u64 * 3)).unwrap();
            }
            let mut log = Log::default();
            net.run_until(TimeFlag(100), &mut log);
            log.0
        };
        assert_eq!(run(42), run(42));
        assert_ne!(run(42), run(43));
        for (due, _, what) in run(42) {
            let sender: u64 = what.trim_start_matches("msg").parse().unwrap();
            assert!(due >= sender * 3 + 2);
        }
    }

    #[test]
    fn drop_filter_removes_selected_deliveries() {
        let (mut net, ids) = net(3, LinkModel::ideal(), 0);
        let victim = ids[2];
        net.set_drop_filter(move |_, to, _| *to == victim);
        let out = net.broadcast(ids[0], 1, TimeFlag(0)).unwrap();
        assert_eq!(out, vec![ScheduledDelivery { to: ids[1], due: TimeFlag(0) }]);
    }

    #[test]
    fn multicast_reaches_only_the_audience() {
        let (mut net, ids) = net(4, LinkModel::ideal(), 0);
        let to: BTreeSet<IvTpId> = [ids[0], ids[2], IvTpId(sha256(&[b"stranger"]))].into_iter().collect();
        let out = net.multicast(ids[0], &to, 1, TimeFlag(5)).unwrap();
        assert_eq!(out, vec![ScheduledDelivery { to: ids[2], due: TimeFlag(5) }]);
    }
}
