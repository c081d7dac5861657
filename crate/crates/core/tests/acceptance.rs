//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.

mod common;

use std::future::Future;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use common::assembly::{batch_invariants, inline_invariants};
use common::fuzz::liveness_run;
use common::hedge::{completion_time, ctx, scripted};
use common::oracles::{
    exhaustive_degeneration, poly_fixture, poly_oracle_score, random_degeneration, POLY_CANDIDATES, POLY_FROZEN,
    POLY_HISTORY,
};
use common::walker::{fig6, load, random_walk, FIG6_SEED};
use common::*;
use genrank::fsm::{FsmDefinition, StateKind};
use genrank::generators::{fan_out, Candidate, FanoutPolicy, GeneratorKind, GeneratorSpec, Registry};
use genrank::guardrails::{
    check_offensive, check_repetition, check_selfhood, DegenerationPolicy, Embedder, HashedBowEmbedder,
    RepetitionMemory, RepetitionThresholds,
};
use genrank::ranker::{evaluate, EvalCandidate, EvalTurn, PolyEncoder, PolyEncoderConfig, RandomScorer, Scorer};
use genrank::service::{replay, Resources, RULE_SOURCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn paused<F: Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .start_paused(true)
        .build()
        .unwrap()
        .block_on(f)
}

fn eval_turn(n: usize, good: usize, salt: usize) -> EvalTurn {
    EvalTurn {
        history: vec![format!("context {salt}")],
        candidates: (0..n)
            .map(|i| EvalCandidate {
                text: format!("t{salt} c{i}"),
                good: i < good,
            })
            .collect(),
    }
}

fn random_baseline() -> Outcome {
    let start = Instant::now();
    let turns: Vec<EvalTurn> = (0..10_000).map(|i| eval_turn(20, 1, i)).collect();
    let r = evaluate(&turns, &RandomScorer::new(5)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(r.n_turns == 10_000, "{} turns", r.n_turns);
    ensure!((r.hits_at_1 - 0.05).abs() <= 0.005, "hits@1 {:.4}", r.hits_at_1);
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("hits@1 {:.4} over 10000 turns in {secs:.2}s", r.hits_at_1))
}

fn multi_gold() -> Outcome {
    let shapes = [(2, 1), (3, 1), (4, 2)];
    let turns: Vec<EvalTurn> = (0..100_000)
        .map(|i| {
            let (n, g) = shapes[i % 3];
            eval_turn(n, g, i)
        })
        .collect();
    let r = evaluate(&turns, &RandomScorer::new(9)).map_err(|e| e.to_string())?;
    let closed = (0.5 + 1.0 / 3.0 + 0.5) / 3.0;
    ensure!((r.hits_at_1 - closed).abs() <= 0.01, "hits@1 {:.4} vs closed form {closed:.4}", r.hits_at_1);
    ensure!((r.expected_random - closed).abs() < 1e-3, "per-turn mean {:.4}", r.expected_random);
    let skew: Vec<EvalTurn> = (0..100_000)
        .map(|i| if i % 2 == 0 { eval_turn(2, 1, i) } else { eval_turn(10, 1, i) })
        .collect();
    let s = evaluate(&skew, &RandomScorer::new(10)).map_err(|e| e.to_string())?;
    ensure!((s.hits_at_1 - 0.3).abs() <= 0.01, "skewed hits@1 {:.4} vs 0.3", s.hits_at_1);
    ensure!((s.pooled_good_fraction - 1.0 / 6.0).abs() < 1e-9, "pooled {:.4}", s.pooled_good_fraction);
    Ok(format!(
        "simulated {:.4} vs mean-of-fractions {closed:.4}; skewed fixture: per-turn mean {:.4}, pooled {:.4}, simulated {:.4}",
        r.hits_at_1, s.expected_random, s.pooled_good_fraction, s.hits_at_1
    ))
}

fn poly_oracle() -> Outcome {
    let (pe, emb) = poly_fixture();
    let history: Vec<String> = POLY_HISTORY.iter().map(|s| s.to_string()).collect();
    let utts: Vec<Vec<f64>> = POLY_HISTORY.iter().map(|h| emb.embed(h)).collect();
    let got = pe.score_batch(&history, &POLY_CANDIDATES).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (i, c) in POLY_CANDIDATES.iter().enumerate() {
        let want = poly_oracle_score(pe.codes(), &utts, &emb.embed(c));
        worst = worst.max((got[i] - want).abs()).max((got[i] - POLY_FROZEN[i]).abs());
    }
    ensure!(worst < 1e-9, "max deviation {worst:e}");
    let single = PolyEncoder::new(
        PolyEncoderConfig {
            m: 1,
            ..Default::default()
        },
        Arc::new(HashedBowEmbedder::default()),
    )
    .map_err(|e| e.to_string())?;
    let selfsim = single.score(&["hello".to_string()], "hello").map_err(|e| e.to_string())?;
    ensure!(selfsim == 1.0, "m=1 self-similarity {selfsim}");
    Ok(format!("max deviation {worst:.1e} over 4 candidates, m=4; m=1 self-similarity {selfsim}"))
}

fn batch_assembly() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let mut batches = 0;
    for corpus in 0..200 {
        let n_custom = rng.random_range(0..=50);
        let custom_turns: Vec<usize> = (0..n_custom).map(|_| rng.random_range(0..12)).collect();
        let n_aux = rng.random_range(0..=1000);
        batches += batch_invariants(&custom_turns, n_aux, rng.random()).map_err(|e| format!("corpus {corpus}: {e}"))?;
    }
    Ok(format!("200 random corpora, {batches} batches"))
}

fn inline_assembly() -> Outcome {
    for seed in 0..20 {
        inline_invariants(seed).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok("12-bad subsampling and 4-bad padding cases over 20 seeds".into())
}

fn hedging() -> Outcome {
    paused(async {
        let registry = Registry::new(vec![GeneratorSpec::remote(
            "G",
            FanoutPolicy::new(5, 1, 1000, 1.0),
            Arc::new(scripted(&[100, 200, 300, 1500, 2000])),
        )])
        .map_err(|e| e.to_string())?;
        let report = fan_out(&ctx(), &registry, 9000).await;
        ensure!(report.candidates.len() == 3, "{} candidates at 1000ms", report.candidates.len());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dist = LogNormal::new(5.5, 0.9).unwrap();
        let mut faster = 0;
        for trial in 0..1000 {
            let n: u32 = rng.random_range(1..=6);
            let draws: Vec<u64> = (0..2 * n)
                .map(|_| {
                    let x: f64 = dist.sample(&mut rng);
                    x.round() as u64
                })
                .collect();
            let plain = completion_time(FanoutPolicy::new(n, 1, 1000, 1.0), draws[..n as usize].to_vec()).await;
            let hedged = completion_time(FanoutPolicy::new(n, 2, 1000, 0.5), draws.clone()).await;
            ensure!(hedged <= plain, "trial {trial}: hedged {hedged}ms > plain {plain}ms");
            faster += usize::from(hedged < plain);
        }

        let mut recorded = 0;
        for case in 0..500 {
            let lat: Vec<u64> = (0..rng.random_range(1..8)).map(|_| rng.random_range(0..3000)).collect();
            let deadline = rng.random_range(1..2500);
            let envelope = rng.random_range(1..3000);
            let policy = FanoutPolicy::new(lat.len() as u32, rng.random_range(1..3), deadline, rng.random_range(0.1..=1.0));
            let mut script = lat.clone();
            script.extend(lat.iter().rev());
            let registry = Registry::new(vec![GeneratorSpec::remote("G", policy, Arc::new(scripted(&script)))])
                .map_err(|e| e.to_string())?;
            let report = fan_out(&ctx(), &registry, envelope).await;
            for c in &report.candidates {
                ensure!(c.latency_ms <= deadline.min(envelope), "case {case}: {}ms past {deadline}ms", c.latency_ms);
            }
            recorded += report.candidates.len();
        }
        Ok(format!(
            "3 of 5 at 1000ms; hedged never later on 1000 paired draws ({faster} strictly faster); {recorded} candidates within deadline over 500 cases"
        ))
    })
}

fn guardrails(res: &Resources) -> Outcome {
    let words = ["Great", "cats,", "dogs", "run!"];
    let (checked, failing) =
        exhaustive_degeneration(&words, &DegenerationPolicy::default(), 12)?;
    ensure!(checked == (0..=12).map(|l| 4u64.pow(l)).sum::<u64>(), "checked {checked} strings");
    random_degeneration(10_000, 12)?;

    let emb = res.embedder.as_ref();
    let t = RepetitionThresholds::default();
    let text = "I love hiking in the mountains. Do you like the outdoors?";
    let cand = Candidate::new(text, "X", GeneratorKind::Remote, 0).ok_or("candidate rejected")?;
    ensure!(check_repetition(&cand, &RepetitionMemory::new(), emb, t).passed, "empty memory rejected a reply");
    let mut mem = RepetitionMemory::new();
    mem.remember(text, 1, emb);
    ensure!(!check_repetition(&cand, &mem, emb, t).passed, "exact duplicate passed");

    let mild = check_offensive("i kicked his butt in Mario Kart", res.lexicon.as_ref(), res.guardrails.config.offensive_threshold);
    ensure!(mild.passed, "mild sentence flagged: {mild:?}");
    let human = check_selfhood("I just got back from getting groceries for dinner", &res.classifier);
    ensure!(!human.passed, "human-claim sentence passed selfhood");
    Ok(format!(
        "{checked} strings of up to 12 tokens ({failing} degenerate) and 10000 random strings agree; repetition and cited sentences as specified"
    ))
}

fn fsm(res: &Resources) -> Outcome {
    let movies = load("movies.toml");
    ensure!(movies.states().len() == 13, "{} states", movies.states().len());
    let ingress = movies.states().iter().filter(|s| s.kind == StateKind::Ingress).count();

    let run = fig6(res, FIG6_SEED);
    let egress: Vec<_> = run.iter().map(|r| r.as_ref().map(|r| r.egress.as_str())).collect();
    ensure!(
        egress == [Some("ASK_GENRE"), Some("GENRE_COMMENT"), Some("TITLE_FACT")],
        "script egress {egress:?}"
    );
    let fact = &run[2].as_ref().unwrap().text;
    ensure!(fact.contains("anthony hopkins"), "title turn lacks the cast fact: {fact}");
    ensure!(run == fig6(res, FIG6_SEED), "second replay differs");

    let (responses, steer) = random_walk(res, 1000, 11)?;
    ensure!(responses > 0 && steer > 0, "{responses} responses, {steer} steer-aways");

    let src = std::fs::read_to_string(data_dir().join("fsm/movies.toml")).map_err(|e| e.to_string())?;
    let broken = src.replacen("[[states]]", "[[states]]\nname = \"DEAD_END\"\nkind = \"egress\"\n\n[[states]]", 1);
    let err = match FsmDefinition::from_toml(&broken) {
        Ok(_) => return Err("definition with a transitionless state loaded".into()),
        Err(e) => e.to_string(),
    };
    ensure!(err.contains("DEAD_END") && err.contains("no outgoing transition"), "unexpected load error: {err}");
    Ok(format!(
        "13 states ({ingress} ingress); three-turn script replays; walk gave {responses} responses and {steer} steer-aways; transitionless state rejected"
    ))
}

fn golden() -> Outcome {
    paused(async {
        let (engine, _store) = golden_engine();
        engine.create_session("simpson-user", Some(GOLDEN_SESSION)).await.map_err(|e| e.to_string())?;
        let lines = table1();
        let report = replay(&engine, GOLDEN_SESSION, &lines).await.map_err(|e| e.to_string())?;
        let got = report.transcript();
        ensure!(got.len() >= lines.len(), "transcript has {} lines", got.len());
        for (i, (g, w)) in got.iter().zip(&lines).enumerate() {
            ensure!(g == w, "line {i}: got {:?} from {}, want {:?} from {}", g.text, g.source, w.text, w.source);
        }
        let worst = report.rows.iter().map(|r| r.total_ms).max().unwrap_or(0);
        ensure!(worst < 9000, "slowest turn {worst}ms");
        let last = report.rows.last().unwrap();
        ensure!(
            last.session_ended && last.got.source == RULE_SOURCE && last.got.text == engine.res.templates.farewell,
            "stop turn answered {:?}",
            last.got
        );
        Ok(format!("{} lines byte-for-byte; slowest turn {worst}ms", lines.len()))
    })
}

fn liveness() -> Outcome {
    paused(async {
        let s = liveness_run(10_000, 2021).await?;
        ensure!(s.worst_ms <= s.deadline_ms, "worst turn {}ms", s.worst_ms);
        Ok(format!(
            "{} answered turns, worst {}ms of {}ms budget, {} budget-clipped",
            s.answered, s.worst_ms, s.deadline_ms, s.budget_timeouts
        ))
    })
}

fn main() {
    let res = Resources::load(&config(), today()).unwrap().0;
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("random-baseline hits@1", Box::new(random_baseline)),
        ("multi-gold baseline consistency", Box::new(multi_gold)),
        ("poly-encoder scoring oracle", Box::new(poly_oracle)),
        ("batch assembly", Box::new(batch_assembly)),
        ("inline assembly", Box::new(inline_assembly)),
        ("hedging and deadlines", Box::new(hedging)),
        ("guardrail oracles", Box::new(|| guardrails(&res))),
        ("fsm conformance", Box::new(|| fsm(&res))),
        ("end-to-end golden replay", Box::new(golden)),
        ("liveness fuzz", Box::new(liveness)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
