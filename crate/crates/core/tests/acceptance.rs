//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use negotiation::fixtures;
use negotiation::io::{
    generate_sound_sdn, parse, parse_unchecked, random_concrete, retarget_mutant, serialize, Shape,
};
use negotiation::model::{is_deterministic, AtomId, Negotiation, OutcomeName};
use negotiation::rules::{final_outcome_map, find_iterations, Redex, RuleKind};
use negotiation::semantics::{
    format_sequence, reachability_graph, soundness_oracle, summary_oracle, SemanticsError, Verdict,
    WitnessKind,
};
use negotiation::structure::{
    enumerate_minimal_loops, negotiation_graph, synchronizers, DEFAULT_CYCLE_LIMIT,
};
use negotiation::summarize::{
    check_sound_reduction, final_outcome_names, summarize, summarize_acyclic, summarize_with, Event,
    Options, Scope,
};

const FDM_TIME_LIMIT: Duration = Duration::from_secs(1);
const ACYCLIC_TIME_LIMIT: Duration = Duration::from_secs(60);
const ACYCLIC_INSTANCES: u64 = 200;
const ACYCLIC_MAX_ATOMS: usize = 30;
const CYCLIC_INSTANCES: u64 = 200;
const CYCLIC_MAX_ATOMS: usize = 20;
const CONCRETE_INSTANCES: u64 = 100;
const CONCRETE_MAX_ATOMS: usize = 8;
const CONCRETE_MAX_AGENTS: usize = 3;
const CONCRETE_MAX_LABELS: usize = 3;
const EQUIVALENCE_INSTANCES: u64 = 300;
const ORACLE_NODE_LIMIT: usize = 200_000;
const LOOP_MAX_ATOMS: usize = 8;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn n(s: &str) -> AtomId {
    AtomId::new(s)
}

fn atoms_of(neg: &Negotiation) -> BTreeSet<String> {
    neg.atoms.keys().map(|a| a.to_string()).collect()
}

fn set(v: &[&str]) -> BTreeSet<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn self_loops(neg: &Negotiation, atom: &AtomId) -> usize {
    find_iterations(neg)
        .iter()
        .filter(|r| matches!(r, Redex::Iteration { atom: a, .. } if a == atom))
        .count()
}

fn cli(args: &[&str], dir: &Path) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_negot"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run negot");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn criterion_1() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fdm = fixtures::fdm_cyclic();
    std::fs::write(dir.path().join("fdm.neg"), serialize(&fdm)).map_err(|e| e.to_string())?;

    let start = Instant::now();
    let res = summarize(&fdm).map_err(|e| e.to_string())?;
    let (code, out) = cli(&["sound", "fdm.neg", "--method", "both"], dir.path());
    let elapsed = start.elapsed();
    let s = res.summary().ok_or("FDM-cyclic did not summarize")?;
    ensure(s.atom_count() == 1, || format!("{} atoms left", s.atom_count()))?;
    ensure(code == 0, || format!("sound --method both exited {code}"))?;
    let out = String::from_utf8_lossy(&out);
    ensure(out.trim() == "Sound (agree)", || format!("reported {out:?}"))?;
    ensure(elapsed < FDM_TIME_LIMIT, || format!("took {elapsed:?}"))?;

    let dead = fixtures::fdm_deadlock();
    let rg = reachability_graph(&dead, ORACLE_NODE_LIMIT).map_err(|e| e.to_string())?;
    let Verdict::Unsound(w) = soundness_oracle(&dead, ORACLE_NODE_LIMIT).map_err(|e| e.to_string())? else {
        return Err("deadlock variant judged sound".into());
    };
    ensure(w.kind == WitnessKind::Deadlock, || format!("witness {w}"))?;
    let target = rg.node_index(w.marking.as_ref().unwrap()).unwrap();
    let expected = vec![(n("n0"), OutcomeName::new("st")), (n("nFD"), OutcomeName::new("yes"))];
    let shortest = rg.shortest_sequences(target, 16);
    ensure(shortest.contains(&expected), || {
        format!("shortest witnesses {:?}", shortest.iter().map(|s| format_sequence(s)).collect::<Vec<_>>())
    })?;
    Ok(format!(
        "single atom, Sound (agree) in {:.0?}; deadlock witness {}",
        elapsed,
        format_sequence(&expected)
    ))
}

fn criterion_2() -> Check {
    let neg = fixtures::fig3();
    let mut replayed = Vec::new();
    let res = summarize_with(&neg, Options::default(), &mut |e| {
        if let Event::Replayed { negotiation, .. } = e {
            replayed.push((*negotiation).clone());
        }
    })
    .map_err(|e| e.to_string())?;
    ensure(res.is_sound(), || "fig3 did not summarize".into())?;
    let syncs: Vec<String> = res.stats.rounds.iter().map(|r| r.synchronizer.to_string()).collect();
    ensure(syncs == ["n2", "n1"], || format!("rounds at {syncs:?}"))?;
    // (c): n4 folded into the blue atom n2, which now loops on itself
    let c = &replayed[0];
    ensure(atoms_of(c) == set(&["n0", "n1", "n2", "n3", "n5", "nf"]), || format!("(c) atoms {:?}", atoms_of(c)))?;
    ensure(self_loops(c, &n("n2")) == 1 && c.atoms[&n("n2")].outcomes.len() == 2, || {
        format!("(c) n2 outcomes {:?}", c.atoms[&n("n2")].outcomes.keys().collect::<Vec<_>>())
    })?;
    // (e): the red fragment folded into n1
    let e = &replayed[1];
    ensure(atoms_of(e) == set(&["n0", "n1", "nf"]), || format!("(e) atoms {:?}", atoms_of(e)))?;
    ensure(self_loops(e, &n("n1")) == 1 && e.atoms[&n("n1")].outcomes.len() == 2, || {
        format!("(e) n1 outcomes {:?}", e.atoms[&n("n1")].outcomes.keys().collect::<Vec<_>>())
    })?;
    Ok("2 rounds (n2 then n1); shapes (c) and (e) reproduced".into())
}

fn criterion_3() -> Check {
    let left = fixtures::fig4_left();
    ensure(!negotiation_graph(&left).is_acyclic(), || "left graph acyclic".into())?;
    let rg = reachability_graph(&left, ORACLE_NODE_LIMIT).map_err(|e| e.to_string())?;
    ensure(rg.is_acyclic(), || "left reachability graph cyclic".into())?;
    let loops = enumerate_minimal_loops(&rg, DEFAULT_CYCLE_LIMIT).map_err(|e| e.to_string())?;
    ensure(loops.is_empty(), || format!("{} loops on the left", loops.len()))?;

    let right = fixtures::fig4_right();
    let rg = reachability_graph(&right, ORACLE_NODE_LIMIT).map_err(|e| e.to_string())?;
    let loops = enumerate_minimal_loops(&rg, DEFAULT_CYCLE_LIMIT).map_err(|e| e.to_string())?;
    let target: BTreeSet<AtomId> = [n("n1"), n("n2")].into();
    let found = loops.iter().find(|l| l.atoms() == target).ok_or("no loop over {n1,n2}")?;
    let syncs = synchronizers(&right, found);
    ensure(syncs.is_empty(), || format!("synchronizers {syncs:?}"))?;
    Ok("left: cyclic graph, acyclic reachability, 0 loops; right: loop {n1,n2} without synchronizer".into())
}

fn criterion_4() -> Check {
    let neg = fixtures::fig5();
    let initial = neg.outcome_count();
    let mut split_removed = Vec::new();
    let mut main: Vec<(RuleKind, usize, Option<AtomId>, usize)> = Vec::new();
    let mut after_iteration = None;
    let res = summarize_with(&neg, Options::default(), &mut |e| match e {
        Event::Applied {
            scope: Scope::Split,
            application,
            ..
        } => split_removed.push(application.removed_atom.clone()),
        Event::Applied {
            scope: Scope::Main,
            application,
            after,
            ..
        } => main.push((
            application.kind,
            application.produced.len(),
            application.removed_atom.clone(),
            after.outcome_count(),
        )),
        Event::Iterated { negotiation, .. } => {
            after_iteration.get_or_insert(negotiation.outcome_count());
        }
        _ => {}
    })
    .map_err(|e| e.to_string())?;
    ensure(res.stats.rounds.first().is_some_and(|r| r.synchronizer == "n1"), || "first synchronizer is not n1".into())?;
    ensure(split_removed.first() == Some(&Some(n("n3"))), || format!("split removals {split_removed:?}"))?;
    let (k1, p1, r1, c1) = main[0].clone();
    let (k2, p2, _, c2) = main[1].clone();
    ensure(k1 == RuleKind::Shortcut && p1 == 3 && r1.is_none(), || format!("first replayed {:?}", main[0]))?;
    ensure(k2 == RuleKind::Shortcut && p2 == 2, || format!("second replayed {:?}", main[1]))?;
    ensure(c1 == initial + 2 && c2 == initial + 3, || format!("outcome counts {c1}, {c2}"))?;
    ensure(after_iteration == Some(initial + 2), || format!("after iteration {after_iteration:?}"))?;
    ensure(res.is_sound(), || "no summary".into())?;
    Ok(format!(
        "outcomes {initial} -> +3 ({c1}) -> +2 ({c2}) -> iteration {}; n3 kept; summary reached",
        initial + 2
    ))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut largest = 0;
    for seed in 0..ACYCLIC_INSTANCES {
        let atoms = 2 + (seed as usize * 7) % (ACYCLIC_MAX_ATOMS - 1);
        let agents = 1 + (seed as usize % 4);
        let neg = generate_sound_sdn(seed, Shape { atoms, agents, loop_depth: 0 }).map_err(|e| e.to_string())?;
        largest = largest.max(neg.atom_count());
        let res = summarize_acyclic(&neg).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(res.is_sound(), || format!("seed {seed}: no summary"))?;
        let used = res.transcript.count(RuleKind::Merge) + res.transcript.count(RuleKind::Shortcut);
        let bound = neg.atom_count().pow(2) + neg.outcome_count();
        ensure(used <= bound, || format!("seed {seed}: {used} > {bound}"))?;
        worst = worst.max(used as f64 / bound as f64);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < ACYCLIC_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{ACYCLIC_INSTANCES} instances up to {largest} atoms, 0 violations, max ratio {worst:.3}, {elapsed:.1?}"
    ))
}

fn cyclic_instance(seed: u64) -> Negotiation {
    let atoms = 4 + (seed as usize * 5) % (CYCLIC_MAX_ATOMS - 3);
    let agents = 1 + (seed as usize % 3);
    let loop_depth = 1 + (seed as usize % 3);
    generate_sound_sdn(seed, Shape { atoms, agents, loop_depth }).expect("valid shape")
}

fn criterion_6() -> Check {
    let mut rounds = 0;
    let mut flags = 0;
    for seed in 0..CYCLIC_INSTANCES {
        let neg = cyclic_instance(seed);
        ensure(!negotiation_graph(&neg).is_acyclic(), || format!("seed {seed}: acyclic"))?;
        let res = summarize(&neg).map_err(|e| format!("seed {seed}: {e}"))?;
        ensure(res.is_sound(), || format!("seed {seed}: no summary"))?;
        for f in res.stats.flags() {
            ensure(f.holds, || format!("seed {seed}: {} {:?} {}", f.name, f.round, f.detail))?;
            flags += 1;
        }
        rounds += res.stats.rounds.len();
    }
    Ok(format!("{CYCLIC_INSTANCES} instances, {rounds} rounds, {flags} flags checked, all hold"))
}

fn oracle_relations(neg: &Negotiation) -> Result<BTreeMap<OutcomeName, negotiation::Relation>, SemanticsError> {
    summary_oracle(neg, ORACLE_NODE_LIMIT)
}

fn criterion_7() -> Check {
    let mut applications = 0;
    for seed in 0..CONCRETE_INSTANCES {
        let atoms = 2 + (seed as usize % (CONCRETE_MAX_ATOMS - 1));
        let agents = 1 + (seed as usize % CONCRETE_MAX_AGENTS);
        let shape = Shape { atoms, agents, loop_depth: 1 + seed as usize % 2 };
        let sym = generate_sound_sdn(seed, shape).map_err(|e| e.to_string())?;
        let neg = random_concrete(&sym, seed, CONCRETE_MAX_LABELS).map_err(|e| e.to_string())?;
        let mut failures = Vec::new();
        let mut count = 0;
        let res = summarize_with(&neg, Options::default(), &mut |e| {
            let Event::Applied { before, application, after, .. } = e else { return };
            count += 1;
            let site = format!("seed {seed} `{application}`");
            if !is_deterministic(after) {
                failures.push(format!("{site}: determinism lost"));
            }
            let (vb, va) = (
                soundness_oracle(before, ORACLE_NODE_LIMIT).map(|v| v.is_sound()),
                soundness_oracle(after, ORACLE_NODE_LIMIT).map(|v| v.is_sound()),
            );
            if vb != va {
                failures.push(format!("{site}: verdict {vb:?} -> {va:?}"));
                return;
            }
            if vb != Ok(true) {
                return;
            }
            let (Ok(rb), Ok(ra)) = (oracle_relations(before), oracle_relations(after)) else {
                failures.push(format!("{site}: summary oracle failed"));
                return;
            };
            for (old, new) in final_outcome_map(before, application) {
                let [new] = new.as_slice() else {
                    failures.push(format!("{site}: {old} maps to {new:?}"));
                    continue;
                };
                if rb.get(&old) != ra.get(new) {
                    failures.push(format!("{site}: summary of {old} changed"));
                }
            }
        })
        .map_err(|e| format!("seed {seed}: {e}"))?;
        if let Some(f) = failures.first() {
            return Err(f.clone());
        }
        applications += count;
        // and the end result matches the oracle outright
        let s = res.summary().ok_or_else(|| format!("seed {seed}: no summary"))?;
        let expected = oracle_relations(&neg).map_err(|e| e.to_string())?;
        for (old, new) in final_outcome_names(&neg, &res.transcript) {
            let got = s.outcome(&s.final_atom, &new).and_then(|o| o.transformer.as_relation());
            ensure(got == expected.get(&old), || format!("seed {seed}: summary of {old} differs"))?;
        }
    }
    Ok(format!("{CONCRETE_INSTANCES} concrete instances, {applications} applications, relations equal"))
}

fn criterion_8() -> Check {
    let (mut agree, mut unsound, mut skipped) = (0, 0, 0);
    for seed in 0..EQUIVALENCE_INSTANCES {
        let atoms = 2 + (seed as usize % 9);
        let agents = 1 + (seed as usize % 3);
        let sound = generate_sound_sdn(seed, Shape { atoms, agents, loop_depth: seed as usize % 3 })
            .map_err(|e| e.to_string())?;
        let mutant = retarget_mutant(&sound, seed);
        for neg in std::iter::once(sound).chain(mutant) {
            let oracle = match soundness_oracle(&neg, ORACLE_NODE_LIMIT) {
                Ok(v) => v.is_sound(),
                Err(SemanticsError::NodeLimit(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e.to_string()),
            };
            let reduction = check_sound_reduction(&neg).map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(reduction.is_sound() == oracle, || {
                format!("seed {seed}: reduction {reduction:?} vs oracle {oracle}\n{}", serialize(&neg))
            })?;
            agree += 1;
            unsound += usize::from(!oracle);
        }
    }
    Ok(format!("{agree} instances agree ({unsound} unsound), {skipped} beyond oracle limits"))
}

fn criterion_9() -> Check {
    let (mut instances, mut loops_seen) = (0, 0);
    for seed in 0..CYCLIC_INSTANCES {
        let atoms = 4 + (seed as usize % (LOOP_MAX_ATOMS - 3));
        let agents = 1 + (seed as usize % 3);
        let neg = generate_sound_sdn(seed, Shape { atoms, agents, loop_depth: 1 + seed as usize % 2 })
            .map_err(|e| e.to_string())?;
        let graph = negotiation_graph(&neg);
        if graph.is_acyclic() {
            continue;
        }
        instances += 1;
        let rg = reachability_graph(&neg, ORACLE_NODE_LIMIT).map_err(|e| e.to_string())?;
        let loops = enumerate_minimal_loops(&rg, DEFAULT_CYCLE_LIMIT).map_err(|e| e.to_string())?;
        ensure(!loops.is_empty(), || format!("seed {seed}: no loop"))?;
        for l in &loops {
            ensure(graph.induces_strongly_connected(&l.atoms()), || {
                format!("seed {seed}: loop {:?} not strongly connected", l.atoms())
            })?;
            ensure(!synchronizers(&neg, l).is_empty(), || {
                format!("seed {seed}: loop {:?} has no synchronizer", l.atoms())
            })?;
        }
        loops_seen += loops.len();
    }
    Ok(format!("{instances} cyclic instances, {loops_seen} minimal loops, all strongly connected and synchronized"))
}

fn criterion_10() -> Check {
    let mut corpus: Vec<(String, Negotiation)> =
        fixtures::all().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if path.extension().is_some_and(|x| x == "neg") {
            let text = std::fs::read_to_string(&path).map_err(|e| e.to_string())?;
            let neg = parse_unchecked(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            ensure(serialize(&neg) == text, || format!("{} is not canonical", path.display()))?;
            corpus.push((path.display().to_string(), neg));
        }
    }
    for seed in 0..50 {
        let neg = generate_sound_sdn(seed, Shape { atoms: 8, agents: 3, loop_depth: 1 }).map_err(|e| e.to_string())?;
        let concrete = random_concrete(&neg, seed, 3).map_err(|e| e.to_string())?;
        corpus.push((format!("gen {seed}"), neg));
        corpus.push((format!("gen {seed} concrete"), concrete));
    }
    for (name, neg) in &corpus {
        let text = serialize(neg);
        let back = parse_unchecked(&text).map_err(|e| format!("{name}: {e}"))?;
        ensure(back == *neg, || format!("{name}: structure changed"))?;
        ensure(serialize(&back) == text, || format!("{name}: bytes changed"))?;
    }
    ensure(parse(&serialize(&fixtures::fdm_cyclic())).is_ok(), || "fdm does not validate".into())?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(tmp.path().join("fig3.neg"), serialize(&fixtures::fig3())).map_err(|e| e.to_string())?;
    let runs: Vec<_> = (0..2)
        .map(|i| {
            let trace = format!("t{i}.txt");
            let stats = format!("s{i}.txt");
            let dot = format!("d{i}.dot");
            let g = format!("g{i}.neg");
            let a = cli(&["summarize", "fig3.neg", "--trace", &trace, "--stats", &stats], tmp.path());
            let b = cli(&["graph", "fig3.neg", "--dot", &dot, "--reachability"], tmp.path());
            let c = cli(&["gen", "--seed", "7", "--atoms", "6", "--agents", "3", "--loops", "1", "-o", &g], tmp.path());
            let files: Vec<Vec<u8>> = [trace, stats, dot, g]
                .iter()
                .map(|f| std::fs::read(tmp.path().join(f)).unwrap_or_default())
                .collect();
            (a, b, c, files)
        })
        .collect();
    ensure(runs[0] == runs[1], || "CLI outputs differ between runs".into())?;
    ensure(runs[0].0 .0 == 0 && runs[0].1 .0 == 0 && runs[0].2 .0 == 0, || "CLI run failed".into())?;
    Ok(format!("{} documents byte-stable; CLI runs identical", corpus.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("figure fixtures", criterion_1),
        ("reduction pipeline on the two-fragment fixture", criterion_2),
        ("loop counterexamples", criterion_3),
        ("one-agent outcome growth", criterion_4),
        ("acyclic application bound", criterion_5),
        ("per-round instrumentation", criterion_6),
        ("rule correctness on concrete transformers", criterion_7),
        ("reduction agrees with the oracle", criterion_8),
        ("loops and synchronizers", criterion_9),
        ("round trip and determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS [{secs:6.2}s] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL [{secs:6.2}s] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
