use std::collections::BTreeMap;
use std::sync::Arc;

use carry_core::adversary::{AdversaryScript, Behavior};
use carry_core::crypto::ClusterKeys;
use carry_core::harness::{run_scenario, verify_run, Invariant, ScenarioConfig};
use carry_core::replica::{Message, NewViewMessage, WindowEntry};
use carry_core::simnet::PreGstPolicy;
use carry_core::types::{
    canonical_bytes, decode_canonical, extends, Block, BlockBody, BlockStore, Digest,
    EmptyCertificate, EmptyShare, Equivocation, LeaderSchedule, ProtocolConfig, ProtocolVariant,
    QuorumCertificate, ReplicaId, View, VoteShare,
};
use carry_core::validate::validate_block;
use proptest::prelude::*;

const F: usize = 2;
const N: usize = 3 * F + 1;

fn keys() -> ClusterKeys {
    ClusterKeys::new(N, F)
}

fn sched() -> LeaderSchedule {
    LeaderSchedule::round_robin(N)
}

fn digest(tag: u8) -> Digest {
    let mut d = [0u8; 32];
    d[0] = tag;
    d[31] = 0xa5;
    Digest(d)
}

fn qc(view: u64, block: Digest) -> QuorumCertificate {
    let k = keys();
    let votes: Vec<VoteShare> = (0..2 * F + 1)
        .map(|r| VoteShare::sign(&k.signing_key(ReplicaId(r as u32)).unwrap(), View(view), block))
        .collect();
    QuorumCertificate::from_votes(&k, View(view), block, &votes).unwrap()
}

fn empty_cert(view: u64) -> EmptyCertificate {
    let k = keys();
    let shares: Vec<EmptyShare> = (0..2 * F + 1)
        .map(|r| EmptyShare::sign(&k.signing_key(ReplicaId(r as u32)).unwrap(), View(view)))
        .collect();
    EmptyCertificate::from_shares(&k, View(view), &shares).unwrap()
}

fn evidence(view: u64, signer: ReplicaId) -> Equivocation {
    let key = keys().signing_key(signer).unwrap();
    Equivocation::new(
        VoteShare::sign(&key, View(view), digest(1)),
        VoteShare::sign(&key, View(view), digest(2)),
    )
}

fn signed(body: BlockBody) -> Arc<Block> {
    let key = keys().signing_key(body.proposer).unwrap();
    Arc::new(body.sign(&key))
}

fn body(view: u64, qc: QuorumCertificate) -> BlockBody {
    BlockBody {
        view: View(view),
        proposer: sched().leader(View(view)),
        payload: Vec::new(),
        qc,
        reinstated: None,
        empty_certs: Vec::new(),
        faulty_view_evidence: Vec::new(),
    }
}

/// How one view of a gap is accounted for in a generated block.
#[derive(Clone, Copy, Debug)]
enum Cover {
    Nothing,
    Reinstated,
    Empty { depth: usize },
    Proof { depth: usize, bad_signer: bool },
    Twice { depth: usize },
}

fn cover() -> impl Strategy<Value = Cover> {
    prop_oneof![
        1 => Just(Cover::Nothing),
        4 => Just(Cover::Reinstated),
        4 => (0usize..3).prop_map(|depth| Cover::Empty { depth }),
        3 => (0usize..3, proptest::bool::weighted(0.15))
            .prop_map(|(depth, bad_signer)| Cover::Proof { depth, bad_signer }),
        1 => (0usize..3).prop_map(|depth| Cover::Twice { depth }),
    ]
}

/// Builds a carry block at `q + gap` from a per-view coverage plan, attaching
/// certificates and evidence at the requested reinstatement depth (clamped
/// to the chain that exists).
fn build(q: u64, gap: u64, plan: &[Cover], stray: Option<u64>) -> Arc<Block> {
    let base = qc(q, digest(9));
    let views: Vec<u64> = (q + 1..q + gap).collect();
    let chain_views: Vec<u64> = views
        .iter()
        .zip(plan)
        .filter(|(_, c)| matches!(c, Cover::Reinstated))
        .map(|(v, _)| *v)
        .collect();
    // Level 0 is the block itself, level i the i-th reinstated block from the top.
    let levels = 1 + chain_views.len();
    let mut empties: Vec<Vec<EmptyCertificate>> = vec![Vec::new(); levels];
    let mut proofs: Vec<Vec<Equivocation>> = vec![Vec::new(); levels];
    for (v, c) in views.iter().zip(plan) {
        match *c {
            Cover::Nothing | Cover::Reinstated => {}
            Cover::Empty { depth } => empties[depth.min(levels - 1)].push(empty_cert(*v)),
            Cover::Proof { depth, bad_signer } => {
                let leader = sched().leader(View(*v));
                let signer = if bad_signer {
                    ReplicaId((leader.0 + 1) % N as u32)
                } else {
                    leader
                };
                proofs[depth.min(levels - 1)].push(evidence(*v, signer));
            }
            Cover::Twice { depth } => {
                empties[depth.min(levels - 1)].push(empty_cert(*v));
                empties[0].push(empty_cert(*v));
            }
        }
    }
    if let Some(s) = stray {
        empties[0].push(empty_cert(s));
    }
    let mut below: Option<Arc<Block>> = None;
    for (i, v) in chain_views.iter().enumerate() {
        let level = levels - 1 - i;
        let mut b = body(*v, base.clone());
        b.reinstated = below.take();
        b.empty_certs = std::mem::take(&mut empties[level]);
        b.faulty_view_evidence = std::mem::take(&mut proofs[level]);
        below = Some(signed(b));
    }
    let mut top = body(q + gap, base);
    top.reinstated = below;
    top.empty_certs = std::mem::take(&mut empties[0]);
    top.faulty_view_evidence = std::mem::take(&mut proofs[0]);
    signed(top)
}

/// Independent acceptance oracle: counts every coverage source by walking
/// the chain, then applies the acceptance conditions directly.
fn oracle_accepts(block: &Block, rho: u64) -> bool {
    let q = block.qc.view.0;
    let v = block.view.0;
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    let mut attachments_ok = true;
    let mut depth = 0;
    let mut cur = Some(block);
    while let Some(b) = cur {
        if depth > 0 {
            *counts.entry(b.view.0).or_default() += 1;
        }
        for c in &b.empty_certs {
            *counts.entry(c.view.0).or_default() += 1;
        }
        for e in &b.faulty_view_evidence {
            *counts.entry(e.view().0).or_default() += 1;
            attachments_ok &= e.first.voter == sched().leader(e.view());
        }
        depth += 1;
        cur = b.reinstated.as_deref();
    }
    let chain = depth - 1;
    if v - q > rho {
        return attachments_ok && chain == 0;
    }
    let exact = (q + 1..v).all(|u| counts.get(&u) == Some(&1));
    let in_range = counts.keys().all(|u| *u > q && *u < v);
    attachments_ok && exact && in_range && chain as u64 <= rho
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn coverage_matches_oracle(
        q in 0u64..6,
        gap in 1u64..9,
        rho in 1u64..8,
        plan in proptest::collection::vec(cover(), 8),
        stray in proptest::option::weighted(0.1, 0u64..20),
    ) {
        let block = build(q, gap, &plan[..(gap - 1) as usize], stray);
        let cfg = ProtocolConfig::new(F, rho, ProtocolVariant::CarryTheTail);
        let report = validate_block(&block, &cfg, &keys(), &sched());
        prop_assert_eq!(report.is_accept(), oracle_accepts(&block, rho), "{:?}", report);
    }

    #[test]
    fn block_codec_round_trips(
        q in 0u64..5,
        gap in 1u64..6,
        plan in proptest::collection::vec(cover(), 5),
        payload in proptest::collection::vec(any::<u8>(), 0..80),
    ) {
        let block = build(q, gap, &plan[..(gap - 1) as usize], None);
        let mut b = block.body().clone();
        b.payload = payload;
        let block = signed(b);
        let bytes = canonical_bytes(&*block);
        let back: Block = decode_canonical(&bytes).unwrap();
        prop_assert_eq!(back.digest(), block.digest());
        prop_assert_eq!(&back, &*block);
        prop_assert_eq!(canonical_bytes(&back), bytes);
    }

    #[test]
    fn new_view_codec_round_trips(
        next in 2u64..20,
        lock in 0u64..2,
        slots in proptest::collection::btree_map(0u64..2, any::<bool>(), 0..3),
    ) {
        let k = keys();
        let sender = ReplicaId(1);
        let key = k.signing_key(sender).unwrap();
        let window = slots
            .into_iter()
            .map(|(back, vote)| {
                let view = View(next - 1 - back);
                let entry = if vote {
                    WindowEntry::Vote(VoteShare::sign(&key, view, digest(4)))
                } else {
                    WindowEntry::Empty(EmptyShare::sign(&key, view))
                };
                (view, entry)
            })
            .collect();
        let msg = Message::NewView(NewViewMessage {
            sender,
            next_view: View(next),
            lock: qc(lock, digest(3)),
            window,
        });
        let back: Message = decode_canonical(&canonical_bytes(&msg)).unwrap();
        if let Message::NewView(nv) = &back {
            prop_assert!(nv.verify(&k));
        }
        prop_assert_eq!(back, msg);
    }

    #[test]
    fn extends_is_a_partial_order(
        parents in proptest::collection::vec((any::<prop::sample::Index>(), any::<bool>()), 1..12),
    ) {
        let k = keys();
        let genesis = Arc::new(Block::genesis(&k));
        let mut store = BlockStore::new();
        store.insert(genesis.clone());
        let mut blocks = vec![genesis];
        for (i, (pick, embed)) in parents.iter().enumerate() {
            let view = i as u64 + 1;
            let parent = blocks[pick.index(blocks.len())].clone();
            let mut b = if *embed && !parent.is_genesis() {
                let mut b = body(view, parent.qc.clone());
                b.reinstated = Some(parent.clone());
                b
            } else {
                body(view, qc(parent.view.0, parent.digest()))
            };
            b.payload = vec![i as u8];
            let b = signed(b);
            store.insert(b.clone());
            blocks.push(b);
        }
        let ds: Vec<Digest> = blocks.iter().map(|b| b.digest()).collect();
        let rel = |a: Digest, b: Digest| extends(&store, a, b).unwrap();
        for a in &ds {
            prop_assert!(rel(*a, *a));
            prop_assert!(rel(*a, ds[0]));
            for b in &ds {
                if a != b && rel(*a, *b) {
                    prop_assert!(!rel(*b, *a));
                }
                for c in &ds {
                    if rel(*a, *b) && rel(*b, *c) {
                        prop_assert!(rel(*a, *c));
                    }
                }
            }
        }
    }
}

fn behavior() -> impl Strategy<Value = Behavior> {
    prop::sample::select(Behavior::byzantine_menu().to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_scripts_never_break_safety(
        byz in 0u32..4,
        default in behavior(),
        per_view in proptest::collection::btree_map(1u64..16, behavior(), 0..10),
        seed in any::<u64>(),
        rho in 1u64..5,
        carry in any::<bool>(),
        jitter in any::<bool>(),
    ) {
        let variant = if carry {
            ProtocolVariant::CarryTheTail
        } else {
            ProtocolVariant::HotStuff2Baseline
        };
        let mut script = AdversaryScript::with_byzantine([byz], default);
        // Scripts may only steer Byzantine leaders, or make honest ones straggle.
        script.views = per_view
            .into_iter()
            .filter(|(v, b)| (v % 4 == byz as u64) != matches!(b, Behavior::Straggle { .. }))
            .map(|(v, b)| (View(v), b))
            .collect();
        let mut cfg = ScenarioConfig::honest(1, rho, variant, 16)
            .with_seed(seed)
            .with_adversary(script);
        if jitter {
            cfg.network.gst = 120;
            cfg.network.pre_gst_policy = PreGstPolicy::RandomBounded { max: 30 };
        }
        let out = run_scenario(&cfg).unwrap();
        let broken: Vec<_> = verify_run(&cfg, &out)
            .into_iter()
            .filter(|(i, _)| *i != Invariant::Liveness)
            .collect();
        prop_assert!(broken.is_empty(), "{:?}", broken);
    }
}

#[test]
fn coverage_oracle_sees_both_outcomes() {
    let cfg = ProtocolConfig::new(F, 4, ProtocolVariant::CarryTheTail);
    let cases = [
        (vec![Cover::Reinstated, Cover::Empty { depth: 1 }, Cover::Proof { depth: 0, bad_signer: false }], true),
        (vec![Cover::Reinstated, Cover::Nothing, Cover::Empty { depth: 0 }], false),
        (vec![Cover::Twice { depth: 0 }, Cover::Empty { depth: 0 }, Cover::Empty { depth: 0 }], false),
        (vec![Cover::Proof { depth: 0, bad_signer: true }, Cover::Reinstated, Cover::Reinstated], false),
    ];
    for (plan, accept) in cases {
        let block = build(2, 4, &plan, None);
        let got = validate_block(&block, &cfg, &keys(), &sched()).is_accept();
        assert_eq!(got, accept, "{plan:?}");
        assert_eq!(oracle_accepts(&block, 4), accept, "{plan:?}");
    }
}
