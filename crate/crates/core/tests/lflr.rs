use std::cell::Cell;
use std::rc::Rc;

use proptest::prelude::*;
use resil_core::lflr::LflrStore;
use resil_core::sim::{ClusterConfig, SimCluster, Tag};
use resil_core::{Error, SimTime};

fn cluster(n: usize) -> SimCluster {
    SimCluster::new(ClusterConfig::new(n, 3)).unwrap()
}

/// Store whose callbacks hand back the restored blob of `key`.
fn store(n: usize, k: usize, key: &'static str) -> LflrStore<Vec<u8>> {
    let mut s = LflrStore::new(n, k).unwrap();
    for r in 0..n {
        s.register_recovery(r, Box::new(move |ctx| Ok(ctx.restored[key].blob.clone())))
            .unwrap();
    }
    s
}

fn persist_all(c: &mut SimCluster, s: &mut LflrStore<Vec<u8>>, key: &str) {
    for r in 0..c.n_ranks() {
        s.persist(c, r, key, vec![r as u8; 4]).unwrap();
    }
}

#[test]
fn round_trip_after_kill() {
    let mut c = cluster(3);
    let mut s = store(3, 1, "u");
    let blob: Vec<u8> = (0..=255).collect();
    let p = s.persist(&mut c, 0, "u", blob.clone()).unwrap();
    assert_eq!(p.version, 1);
    assert!(!p.degraded);
    c.kill_rank(0).unwrap();
    s.recover_protocol(&mut c, 0).unwrap();
    assert_eq!(s.state(0), Some(&blob));
    assert_eq!(s.get(0, 0, "u").unwrap().blob, blob);
}

#[test]
fn last_completed_version_wins() {
    let mut c = cluster(3);
    let mut s = store(3, 1, "u");
    s.persist(&mut c, 1, "u", vec![1]).unwrap();
    assert_eq!(s.persist(&mut c, 1, "u", vec![2]).unwrap().version, 2);
    c.kill_rank(1).unwrap();
    s.recover_protocol(&mut c, 1).unwrap();
    assert_eq!(s.state(1), Some(&vec![2]));
    assert_eq!(s.get(1, 1, "u").unwrap().version, 2);
}

#[test]
fn failure_during_replication_keeps_previous_version() {
    let mut c = cluster(3);
    let mut s = store(3, 1, "u");
    s.persist(&mut c, 0, "u", vec![1]).unwrap();
    let latency = c.config().costs.message_latency;
    c.schedule_kill(0, c.clock() + SimTime::from_units(latency / 2.0).unwrap())
        .unwrap();
    assert!(matches!(
        s.persist(&mut c, 0, "u", vec![2]),
        Err(Error::RankFailure { ranks }) if ranks == vec![0]
    ));
    assert_eq!(s.version(0, "u"), Some(1));
    for h in [1, 2] {
        assert_eq!(s.get(h, 0, "u").unwrap().blob, vec![1]);
    }
    s.recover_protocol(&mut c, 0).unwrap();
    assert_eq!(s.state(0), Some(&vec![1]));
}

#[test]
fn callback_runs_once_and_sets_state() {
    let mut c = cluster(4);
    let mut s: LflrStore<String> = LflrStore::new(4, 1).unwrap();
    let calls = Rc::new(Cell::new(0));
    let seen = calls.clone();
    s.register_recovery(
        2,
        Box::new(move |ctx| {
            seen.set(seen.get() + 1);
            Ok(format!("rank {} from {} bytes", ctx.rank, ctx.restored["k"].blob.len()))
        }),
    )
    .unwrap();
    s.persist(&mut c, 2, "k", vec![0; 10]).unwrap();
    c.kill_rank(2).unwrap();
    s.recover_protocol(&mut c, 2).unwrap();
    assert_eq!(calls.get(), 1);
    assert_eq!(s.state(2).map(String::as_str), Some("rank 2 from 10 bytes"));
}

#[test]
fn missing_callback_is_unrecoverable() {
    let mut c = cluster(2);
    let mut s: LflrStore<()> = LflrStore::new(2, 1).unwrap();
    c.kill_rank(0).unwrap();
    assert!(matches!(s.recover_protocol(&mut c, 0), Err(Error::Unrecoverable(_))));
}

#[test]
fn registration_and_argument_errors() {
    let mut s: LflrStore<()> = LflrStore::new(2, 1).unwrap();
    s.register_recovery(0, Box::new(|_| Ok(()))).unwrap();
    assert!(matches!(s.register_recovery(0, Box::new(|_| Ok(()))), Err(Error::Usage(_))));
    assert!(LflrStore::<()>::new(2, 0).is_err());
    let mut c = cluster(2);
    assert!(matches!(s.recover_protocol(&mut c, 0), Err(Error::Usage(_))));
}

#[test]
fn single_kill_touches_only_ring_neighbors() {
    let mut c = cluster(4);
    let mut s = store(4, 1, "u");
    persist_all(&mut c, &mut s, "u");
    c.kill_rank(2).unwrap();
    let rep = s.recover_protocol(&mut c, 2).unwrap();
    assert_eq!(rep.ranks_involved, vec![1, 2, 3]);
    assert_eq!(c.ledger().messages_touching(0, Tag::Recovery), 0);
    assert!(c.ledger().messages_touching(1, Tag::Recovery) > 0);
    assert!(rep.bytes_transferred > 0);
    assert_eq!(rep.keys, vec!["u".to_string()]);
    assert_eq!(s.state(2), Some(&vec![2; 4]));
    // replicas rank 2 held for its neighbors are back
    assert_eq!(s.get(2, 1, "u").unwrap().blob, vec![1; 4]);
    assert_eq!(s.get(2, 3, "u").unwrap().blob, vec![3; 4]);
}

#[test]
fn two_adjacent_kills_recover_from_outer_holders() {
    // holders with k = 1 on a ring of 4: rank 1 -> {0, 2}, rank 2 -> {1, 3}
    let mut c = cluster(4);
    let mut s = store(4, 1, "u");
    persist_all(&mut c, &mut s, "u");
    c.kill_rank(1).unwrap();
    c.kill_rank(2).unwrap();
    let r1 = s.recover_protocol(&mut c, 1).unwrap();
    let r2 = s.recover_protocol(&mut c, 2).unwrap();
    assert_eq!(s.state(1), Some(&vec![1; 4]));
    assert_eq!(s.state(2), Some(&vec![2; 4]));
    assert!(!r1.ranks_involved.contains(&3));
    assert!(r2.ranks_involved.contains(&3));
    // rank 2's recovery re-replicated its entry to the respawned rank 1
    assert_eq!(s.get(1, 2, "u").unwrap().blob, vec![2; 4]);
}

#[test]
fn all_holders_lost_is_unrecoverable() {
    let mut c = cluster(4);
    let mut s = store(4, 1, "u");
    persist_all(&mut c, &mut s, "u");
    for r in [1, 2, 3] {
        c.kill_rank(r).unwrap();
    }
    assert!(matches!(s.recover_protocol(&mut c, 2), Err(Error::Unrecoverable(_))));
    s.recover_protocol(&mut c, 1).unwrap();
    assert!(matches!(s.recover_protocol(&mut c, 2), Err(Error::Unrecoverable(_))));
    s.recover_protocol(&mut c, 3).unwrap();
}

#[test]
fn dead_holder_flags_degraded_redundancy() {
    let mut c = cluster(4);
    let mut s = store(4, 1, "u");
    c.kill_rank(1).unwrap();
    let p = s.persist(&mut c, 0, "u", vec![9]).unwrap();
    assert!(p.degraded);
    assert!(s.is_degraded(0, "u"));
    assert_eq!(s.get(3, 0, "u").unwrap().blob, vec![9]);
    assert!(matches!(s.persist(&mut c, 1, "u", vec![1]), Err(Error::RankFailure { .. })));
}

#[test]
fn wider_replication_survives_two_adjacent_holders() {
    let mut c = cluster(6);
    let mut s = store(6, 2, "u");
    persist_all(&mut c, &mut s, "u");
    assert_eq!(s.holders(0), vec![5, 1, 4, 2]);
    for r in [0, 1, 5] {
        c.kill_rank(r).unwrap();
    }
    for r in [0, 1, 5] {
        s.recover_protocol(&mut c, r).unwrap();
        assert_eq!(s.state(r), Some(&vec![r as u8; 4]));
    }
}

proptest! {
    #[test]
    fn durable_when_a_holder_survives(
        n in 3usize..8,
        k in 1usize..3,
        mask in proptest::collection::vec(any::<bool>(), 8),
        blobs in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..24), 8),
    ) {
        let mut c = cluster(n);
        let mut s = store(n, k, "u");
        for r in 0..n {
            s.persist(&mut c, r, "u", blobs[r].clone()).unwrap();
        }
        let killed: Vec<usize> = (0..n).filter(|&r| mask[r]).collect();
        prop_assume!(killed.len() < n);
        for &r in &killed {
            c.kill_rank(r).unwrap();
        }
        for &r in &killed {
            let survivable = s.holders(r).iter().any(|h| !killed.contains(h));
            let out = s.recover_protocol(&mut c, r);
            if survivable {
                out.unwrap();
                prop_assert_eq!(s.state(r), Some(&blobs[r]));
            }
        }
    }

    #[test]
    fn any_single_failure_recovers(n in 2usize..9, victim in 0usize..9) {
        let victim = victim % n;
        let mut c = cluster(n);
        let mut s = store(n, 1, "u");
        persist_all(&mut c, &mut s, "u");
        c.kill_rank(victim).unwrap();
        let rep = s.recover_protocol(&mut c, victim).unwrap();
        prop_assert_eq!(s.state(victim), Some(&vec![victim as u8; 4]));
        let mut allowed = s.holders(victim);
        allowed.push(victim);
        prop_assert!(rep.ranks_involved.iter().all(|r| allowed.contains(r)));
    }
}
