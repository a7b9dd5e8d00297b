//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use common::*;
use ivtp::arbitration::compute_order;
use ivtp::codec::{sha256, Hash32};
use ivtp::consensus::{quorum_threshold, try_commit, Endorsement, PendingTx, PodContext, Verdict};
use ivtp::fixture::Fleet;
use ivtp::identity::IvTpId;
use ivtp::ledger::{encode_blocks, merkle_root, validate_file_bytes, TimeFlag, TxBody, TxKind};
use ivtp::report::SessionStatus;
use ivtp::sim::run_scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, ok: impl Into<String>, fail: impl Into<String>) -> Outcome {
    if cond {
        Ok(ok.into())
    } else {
        Err(fail.into())
    }
}

fn intersection() -> Outcome {
    let out = run_scenario(&scenario("intersection_table2")).map_err(|e| e.to_string())?;
    let r = report(&out);
    let s = r.sessions.first().ok_or("no session")?;
    let ordering = s.ordering.clone().unwrap_or_default();
    let rewards: Vec<_> = out
        .chain
        .transactions()
        .filter_map(|(_, tx)| match &tx.body {
            TxBody::Reward { from, to, amount, .. } => Some((*from, *to, *amount)),
            _ => None,
        })
        .collect();
    let iv = |a: &str| out.vehicles.iter().find(|v| v.alias == a).map(|v| v.id);
    let expected_reward = vec![(iv("IV-1").unwrap(), iv("IV-3").unwrap(), 500)];
    check(
        s.status == SessionStatus::Committed
            && ordering == ["IV-1", "IV-2", "IV-3", "IV-4"]
            && s.proposer.as_deref() == Some("IV-3")
            && rewards == expected_reward,
        "ordering [IV-1, IV-2, IV-3, IV-4], proposer IV-3, one reward IV-1 -> IV-3 of 500",
        format!("status {:?}, ordering {ordering:?}, proposer {:?}, rewards {rewards:?}", s.status, s.proposer),
    )
}

fn comm_table() -> Outcome {
    let out = run_scenario(&scenario("broadcast_round")).map_err(|e| e.to_string())?;
    let table = report(&out).comm_table;
    let all = ["IV-1", "IV-2", "IV-3", "IV-4"];
    let bad: Vec<_> = all
        .iter()
        .filter(|v| {
            let others: Vec<String> = all.iter().filter(|p| p != v).map(|p| p.to_string()).collect();
            table.get(**v) != Some(&others)
        })
        .collect();
    check(
        table.len() == 4 && bad.is_empty(),
        "each of 4 vehicles lists exactly the other three",
        format!("mismatched rows {bad:?} in {table:?}"),
    )
}

fn quorum() -> Outcome {
    let fleet = Fleet::new(101, 1000);
    let author = 0;
    let tx = fleet.comm(author, &[1], 10, b"quorum");
    let votes = |k: usize, rest_invalid: bool, n: usize| -> Vec<Endorsement> {
        (1..=n)
            .filter_map(|i| {
                let v = if i <= k {
                    Verdict::Valid
                } else if rest_invalid {
                    Verdict::Invalid
                } else {
                    return None;
                };
                Some(Endorsement::new(tx.tx_id(), fleet.id(i), v, fleet.kp(i)))
            })
            .collect()
    };
    for n in 0..100 {
        let t = quorum_threshold(n);
        if t != n / 2 + 1 && !(n == 0 && t == 0) {
            return Err(format!("threshold({n}) = {t}"));
        }
        let ctx = PodContext::new((0..=n).map(|i| fleet.id(i)).collect(), 1000, "net");
        let commits = |es: Vec<Endorsement>| {
            let p = PendingTx::new(tx.clone(), TimeFlag(10)).with_endorsements(es);
            try_commit(vec![p], &ctx, &fleet.chain, TimeFlag(10)).block.is_some()
        };
        if !commits(votes(t, false, n)) {
            return Err(format!("n={n}: {t} valid votes did not commit"));
        }
        if t > 0 && (commits(votes(t - 1, false, n)) || commits(votes(t - 1, true, n))) {
            return Err(format!("n={n}: {} valid votes committed", t - 1));
        }
    }
    Ok("threshold = floor(n/2)+1; threshold-1 never commits, threshold always does, n in 0..100".into())
}

fn tamper() -> Outcome {
    let out = run_scenario(&scenario("intersection_table2")).map_err(|e| e.to_string())?;
    let blocks = &out.chain.blocks()[..10];
    let bytes = encode_blocks(blocks);
    if !validate_file_bytes(&bytes).ok {
        return Err("unmutated chain fails validation".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a3f);
    let mut detected = 0;
    for _ in 0..1000 {
        let mut m = bytes.clone();
        let at = rng.gen_range(0..m.len());
        m[at] ^= rng.gen_range(1..=255u8);
        detected += usize::from(!validate_file_bytes(&m).ok);
    }
    check(
        detected == 1000,
        format!("1000/1000 single-byte mutations of a 10-block, {}-byte file detected", bytes.len()),
        format!("{detected}/1000 detected"),
    )
}

fn conservation() -> Outcome {
    let mut runs = 0;
    let mut heights = 0;
    let mut cfgs: Vec<_> = BUNDLED.iter().map(|n| scenario(n)).collect();
    cfgs.extend((0..10).map(|s| short_intersection(s, 0.1)));
    for cfg in cfgs {
        let out = run_scenario(&cfg).map_err(|e| e.to_string())?;
        if let Some(h) = conservation_violation(&out.chain) {
            return Err(format!("{}: supply changed at height {h}", cfg.name));
        }
        runs += 1;
        heights += out.chain.len();
    }
    Ok(format!("supply = vehicles x endowment at all {heights} heights of {runs} runs"))
}

fn determinism() -> Outcome {
    for name in BUNDLED {
        let cfg = scenario(name);
        let a = run_scenario(&cfg).map_err(|e| e.to_string())?.trace_digest();
        let b = run_scenario(&cfg).map_err(|e| e.to_string())?.trace_digest();
        if a != b {
            return Err(format!("{name}: digests differ across identical runs"));
        }
    }
    let mut digests = std::collections::BTreeSet::new();
    for seed in 0..5 {
        let cfg = short_intersection(seed, 0.0);
        digests.insert(run_scenario(&cfg).map_err(|e| e.to_string())?.trace_digest());
    }
    check(
        digests.len() == 5,
        format!("{} bundled scenarios reproduce; 5 jittered seeds give 5 distinct digests", BUNDLED.len()),
        format!("5 jittered seeds gave {} distinct digests", digests.len()),
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

/// The unique arrangement in which every earlier vehicle has an earlier
/// time flag, or the same time flag and a smaller id.
fn oracle(ids: &[IvTpId], tfs: &[u64]) -> Vec<IvTpId> {
    let before = |a: usize, b: usize| tfs[a] < tfs[b] || (tfs[a] == tfs[b] && ids[a] < ids[b]);
    let found: Vec<Vec<usize>> = permutations(ids.len())
        .into_iter()
        .filter(|p| (0..p.len()).all(|i| (i + 1..p.len()).all(|j| before(p[i], p[j]))))
        .collect();
    assert_eq!(found.len(), 1, "oracle admits exactly one arrangement");
    found[0].iter().map(|&i| ids[i]).collect()
}

fn fcfs() -> Outcome {
    let mut cases = 0;
    for n in 1..=5 {
        let ids: Vec<IvTpId> = (0..n).map(|i| IvTpId(sha256(&[b"fcfs", &[i as u8]]))).collect();
        let mut assignments: Vec<Vec<u64>> = permutations(n)
            .into_iter()
            .map(|p| p.iter().map(|&v| 1000 + 10 * v as u64).collect())
            .collect();
        // Every tf vector over {0, 1, 2}: covers all tie patterns.
        for code in 0..3usize.pow(n as u32) {
            assignments.push((0..n).map(|i| (code / 3usize.pow(i as u32) % 3) as u64).collect());
        }
        for tfs in assignments {
            let intents: BTreeMap<IvTpId, TimeFlag> = ids.iter().zip(&tfs).map(|(id, tf)| (*id, TimeFlag(*tf))).collect();
            let got = compute_order(&intents).map_err(|e| e.to_string())?;
            if got != oracle(&ids, &tfs) {
                return Err(format!("n={n} tfs={tfs:?}"));
            }
            cases += 1;
        }
    }
    Ok(format!("compute_order equals the brute-force oracle on {cases} intent sets, n <= 5, with ties"))
}

/// Reference root: pad each odd level by repeating its last node, then hash
/// adjacent pairs, stopping once one pairing pass leaves a single node.
fn reference_root(leaves: &[Hash32]) -> Hash32 {
    let mut level = leaves.to_vec();
    loop {
        if level.len() % 2 == 1 {
            level.push(*level.last().unwrap());
        }
        let mut next = Vec::with_capacity(level.len() / 2);
        let mut i = 0;
        while i < level.len() {
            next.push(sha256(&[&level[i].0[..], &level[i + 1].0[..]]));
            i += 2;
        }
        if next.len() == 1 {
            return next[0];
        }
        level = next;
    }
}

fn merkle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x3e41);
    for case in 0..1000 {
        let n = rng.gen_range(1..=64);
        let leaves: Vec<Hash32> = (0..n).map(|_| Hash32(rng.gen())).collect();
        let got = merkle_root(&leaves).map_err(|e| e.to_string())?;
        if got != reference_root(&leaves) {
            return Err(format!("case {case}, {n} leaves"));
        }
    }
    Ok("merkle_root equals the reference on 1000 random lists of 1..=64 leaves".into())
}

fn loss() -> Outcome {
    let mut committed = [0, 0];
    let mut valid = [0, 0];
    for (slot, drop) in [0.0, 1.0].into_iter().enumerate() {
        for seed in 0..100 {
            let out = run_scenario(&short_intersection(seed, drop)).map_err(|e| e.to_string())?;
            let arbitrations = out.chain.transactions().filter(|(_, tx)| tx.kind() == TxKind::Arbitration).count();
            committed[slot] += usize::from(arbitrations > 0);
            valid[slot] += usize::from(out.chain.validate().ok);
        }
    }
    check(
        committed == [100, 0] && valid == [100, 100],
        "drop 0: 100/100 sessions commit; drop 1: 0/100 commit, 100/100 chains valid",
        format!("drop 0: {}/100 commit; drop 1: {}/100 commit, {}/100 chains valid", committed[0], committed[1], valid[1]),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("four-vehicle intersection", intersection),
        ("broadcast comm table", comm_table),
        ("quorum rule", quorum),
        ("tamper evidence", tamper),
        ("conservation", conservation),
        ("determinism", determinism),
        ("FCFS oracle", fcfs),
        ("Merkle oracle", merkle),
        ("loss robustness", loss),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("AC{} PASS {name}: {msg} ({secs:.2}s)", i + 1),
            Err(msg) => {
                failed += 1;
                println!("AC{} FAIL {name}: {msg} ({secs:.2}s)", i + 1);
            }
        }
    }
    println!("{}/{} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
