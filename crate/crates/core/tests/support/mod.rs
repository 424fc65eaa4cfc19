//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use xtom_core::aog::{AogGrammar, DetectionRecord, NodeId, ParseGraph, Process, Region};
use xtom_core::belief::{update_belief, BeliefState, LikelihoodTables};
use xtom_core::bubble::{content, Bubble, BubbleAction, DialogHistory, Discourse};
use xtom_core::engine::World;
use xtom_core::evaluator::{jnt, jpt, reliance, MinUEstimate};
use xtom_core::performer::{NoiseConfig, Performer};
use xtom_core::policy::lstm::{episode_loss, Dims, LossCoefs, PolicyParams, StepTarget};

// ---------------------------------------------------------------- discourse

pub fn history_of(actions: &[BubbleAction]) -> DialogHistory {
    let mut h = DialogHistory::default();
    for a in actions {
        h.push(
            "q".into(),
            Bubble {
                action: *a,
                content: content(a.sigma1(), a.sigma2()).unwrap(),
                discourse: Discourse::Sequence,
                region: Region::new(0.5, 0.5, 0.1).unwrap(),
            },
        );
    }
    h
}

/// Evaluates every rule on its own, then takes the first that holds.
pub fn discourse_oracle(c: &BubbleAction, history: &[BubbleAction]) -> Discourse {
    let prior = history.iter().rfind(|b| b.attention == c.attention);
    let rules = [
        (Discourse::Recurrence, history.iter().any(|b| b == c)),
        (
            Discourse::Summary,
            prior.is_some_and(|p| c.sigma2() < p.sigma2() && c.sigma1() > p.sigma1()),
        ),
        (
            Discourse::Elaboration,
            prior.is_some_and(|p| c.sigma1() > p.sigma1() || c.sigma2() > p.sigma2()),
        ),
        (Discourse::Restatement, prior.is_some()),
        (Discourse::Sequence, prior.is_none()),
    ];
    rules.into_iter().find(|(_, holds)| *holds).unwrap().0
}

/// Few attention nodes so revisits are common.
pub fn random_action(rng: &mut ChaCha8Rng) -> BubbleAction {
    BubbleAction {
        attention: NodeId(rng.random_range(0..4)),
        act: Process::ALL[rng.random_range(0..3)],
        space: rng.random_range(0..3),
        scale: rng.random_range(0..3),
    }
}

// ------------------------------------------------------------------ reward

/// (ss, cf, sf, cost, turn, expected) with expected values evaluated
/// independently in double precision. Cases 3, 4, 8 and 9 sit on or past
/// the exponent clamp.
pub const REWARD_CASES: [(i8, u8, u8, f64, u32, f64); 10] = [
    (1, 1, 1, 0.7, 1, 1.0),
    (-1, 5, 5, 1.0, 2, 0.18393972058572117),
    (1, 5, 5, 0.1, 1, 22026.465794806718),
    (-1, 5, 5, 0.05, 3, 1.5133309920828285e-05),
    (1, 3, 4, 2.5, 4, 0.29045856068207077),
    (-1, 2, 3, 0.8, 5, 0.1710690654614845),
    (1, 5, 2, 0.3, 2, 1.1504879454464125),
    (1, 5, 5, 0.1, 7, 3146.637970686674),
    (-1, 4, 5, 0.075, 1, 4.5399929762484854e-05),
    (1, 4, 4, 1.3, 30, 0.051380062340961576),
];

pub fn reward_close(r: f64, expected: f64) -> bool {
    (r - expected).abs() <= 1e-12 * expected.abs().max(1.0)
}

// ------------------------------------------------------------------- trust

/// Random tree grammar with `n` nodes and the odd context edge. Node 0 is
/// the root.
pub fn random_grammar(rng: &mut ChaCha8Rng, n: usize) -> AogGrammar {
    let parents: Vec<usize> = (1..n).map(|k| rng.random_range(0..k)).collect();
    let has_kids: BTreeSet<usize> = parents.iter().copied().collect();
    let mut doc = String::new();
    for k in 0..n {
        let kind = if has_kids.contains(&k) { "AND" } else { "TERM" };
        doc.push_str(&format!("node n{k} {kind} l{k}\n"));
    }
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (k, p) in parents.iter().enumerate() {
        doc.push_str(&format!("edge n{p} n{} decomp\n", k + 1));
        pairs.insert((*p, k + 1));
    }
    if n > 2 && rng.random_bool(0.5) {
        let p = *has_kids.iter().nth(rng.random_range(0..has_kids.len())).unwrap();
        let c = rng.random_range(1..n);
        if c != p && !pairs.contains(&(p, c)) && !pairs.contains(&(c, p)) {
            doc.push_str(&format!("edge n{p} n{c} context\n"));
        }
    }
    AogGrammar::parse(&doc).unwrap()
}

fn random_subgraph(rng: &mut ChaCha8Rng, g: &AogGrammar, p_node: f64) -> ParseGraph {
    let mut pg = ParseGraph::empty(g);
    for v in g.node_ids() {
        if rng.random_bool(p_node) {
            pg.insert_node(v);
        }
    }
    for e in g.edge_ids() {
        if rng.random_bool(0.7) {
            pg.insert_edge(g, e);
        }
    }
    pg
}

/// A machine parse with random processes and polarities, and a user model
/// that also predicts undetected nodes.
pub fn random_game(rng: &mut ChaCha8Rng, g: &AogGrammar) -> (MinUEstimate, ParseGraph) {
    let mut pg = ParseGraph::empty(g);
    for v in g.node_ids() {
        if rng.random_bool(0.8) {
            pg.insert_detection(
                v,
                DetectionRecord {
                    process: Process::ALL[rng.random_range(0..3)],
                    confidence: 0.5,
                    region: Region::new(0.5, 0.5, 0.1).unwrap(),
                    correct: rng.random_bool(0.6),
                },
            );
        }
    }
    for e in g.edge_ids() {
        if rng.random_bool(0.8) {
            pg.insert_edge(g, e);
        }
    }
    let mut minu = MinUEstimate::empty(g);
    for z in 0..3 {
        minu.positive[z] = random_subgraph(rng, g, 0.5);
        minu.negative[z] = random_subgraph(rng, g, 0.3);
    }
    (minu, pg)
}

/// Nodes and edges of a graph as plain index sets.
type Sets = (BTreeSet<u32>, BTreeSet<u32>);

fn sets(pg: &ParseGraph) -> Sets {
    (
        pg.nodes().iter().map(|v| v.0).collect(),
        pg.edges().iter().map(|e| e.0).collect(),
    )
}

/// Machine nodes matching `keep`, with the machine's edges between them.
fn machine_part(g: &AogGrammar, pg: &ParseGraph, keep: impl Fn(&DetectionRecord) -> bool) -> Sets {
    let nodes: BTreeSet<u32> = pg.detections().iter().filter(|(_, d)| keep(d)).map(|(v, _)| v.0).collect();
    let edges = pg
        .edges()
        .iter()
        .filter(|e| {
            let edge = g.edge(**e);
            nodes.contains(&edge.parent.0) && nodes.contains(&edge.child.0)
        })
        .map(|e| e.0)
        .collect();
    (nodes, edges)
}

fn overlap(a: &Sets, b: &Sets) -> usize {
    a.0.intersection(&b.0).count() + a.1.intersection(&b.1).count()
}

fn size(a: &Sets) -> usize {
    a.0.len() + a.1.len()
}

/// By-process JPT, JNT and reliance straight from the definitions.
pub fn trust_oracle(g: &AogGrammar, games: &[(MinUEstimate, ParseGraph)]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for (minu, pg) in games {
        let pos = machine_part(g, pg, |d| d.correct);
        let neg = machine_part(g, pg, |d| !d.correct);
        let slices: Vec<(Sets, Sets)> = Process::ALL
            .iter()
            .map(|&z| {
                (
                    machine_part(g, pg, |d| d.process == z && d.correct),
                    machine_part(g, pg, |d| d.process == z && !d.correct),
                )
            })
            .collect();
        let den: usize = slices.iter().map(|(p, n)| size(p) + size(n)).sum();
        for z in 0..3 {
            let up = sets(&minu.positive[z]);
            let un = sets(&minu.negative[z]);
            if size(&pos) > 0 {
                out[0][z] += overlap(&up, &pos) as f64 / size(&pos) as f64;
            }
            if size(&neg) > 0 {
                out[1][z] += overlap(&un, &neg) as f64 / size(&neg) as f64;
            }
            if den > 0 {
                out[2][z] += (overlap(&up, &slices[z].0) + overlap(&un, &slices[z].1)) as f64 / den as f64;
            }
        }
    }
    for metric in &mut out {
        for v in metric.iter_mut() {
            *v /= games.len() as f64;
        }
    }
    out
}

/// Runs one random instance of 1 to 3 games; `Err` describes a mismatch.
pub fn check_trust_instance(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(1..=8);
    let g = random_grammar(rng, n);
    let games: Vec<_> = (0..rng.random_range(1..=3)).map(|_| random_game(rng, &g)).collect();
    let expected = trust_oracle(&g, &games);
    let got = [
        jpt(&g, &games).unwrap(),
        jnt(&g, &games).unwrap(),
        reliance(&g, &games).unwrap(),
    ];
    for (k, (m, e)) in got.iter().zip(expected).enumerate() {
        if m.by_process != e || m.total != e.iter().sum::<f64>() {
            return Err(format!("metric {k}: {:?} vs oracle {e:?}", m.by_process));
        }
    }
    Ok(())
}

/// A user who predicts every machine node under its own process with the
/// right polarity, and also every correct node as positive for all
/// processes when `all_positive` is set.
pub fn perfect_minu(g: &AogGrammar, pg: &ParseGraph, all_positive: bool) -> MinUEstimate {
    let mut minu = MinUEstimate::empty(g);
    for z in Process::ALL {
        let slice = pg.process_slice(g, z);
        let (p, n) = xtom_core::aog::signed_partition(&slice, g).unwrap();
        minu.positive[z.index()] = p;
        minu.negative[z.index()] = n;
        if all_positive {
            minu.positive[z.index()] = xtom_core::aog::signed_partition(pg, g).unwrap().0;
        }
    }
    minu
}

/// The perfect-predictor identities: dJPT = 1 for every process, and the
/// per-game reliance sum is 1.
pub fn check_perfect_predictor(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.random_range(2..=8);
    let g = random_grammar(rng, n);
    let (_, pg) = random_game(rng, &g);
    if pg.nodes().is_empty() {
        return Ok(());
    }
    let jp = jpt(&g, &[(perfect_minu(&g, &pg, true), pg.clone())]).unwrap();
    let has_pos = pg.detections().values().any(|d| d.correct);
    for z in 0..3 {
        let want = if has_pos { 1.0 } else { 0.0 };
        if jp.by_process[z] != want {
            return Err(format!("dJPT for process {z} is {}", jp.by_process[z]));
        }
    }
    let rc = reliance(&g, &[(perfect_minu(&g, &pg, false), pg)]).unwrap();
    if (rc.total - 1.0).abs() > 1e-12 {
        return Err(format!("reliance sum is {}", rc.total));
    }
    Ok(())
}

// ---------------------------------------------------------------- gradient

/// Denominator floor for relative errors. Central differences at h = 1e-5
/// carry f64 roundoff near 1e-10 on these losses, so derivatives much
/// below this scale cannot be resolved.
pub const GRAD_FLOOR: f64 = 1e-5;

/// Central differences against the analytic gradient of the full loss on
/// a random toy network; returns the largest relative error
/// |a - n| / max(|a|, |n|, GRAD_FLOOR).
pub fn gradient_check(seed: u64, h: f64) -> f64 {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        input: rng.random_range(1..=64),
        hidden: rng.random_range(2..=6),
        actions: rng.random_range(2..=8),
    };
    let mut p = PolicyParams::init(dims, &mut rng);
    for x in &mut p.data {
        *x += rng.random_range(-0.3..0.3);
    }
    let steps = rng.random_range(1..=5);
    let inputs: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..dims.input).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<StepTarget> = (0..steps)
        .map(|_| {
            let mut valid: Vec<u32> = (0..dims.actions as u32).filter(|_| rng.random_bool(0.6)).collect();
            if valid.is_empty() {
                valid.push(rng.random_range(0..dims.actions as u32));
            }
            let action = valid[rng.random_range(0..valid.len())];
            StepTarget {
                valid,
                action,
                weight: rng.random_range(-2.0..2.0),
                ret: rng.random_range(-1.0..3.0),
            }
        })
        .collect();
    let coefs = LossCoefs { value: 0.5, entropy: 0.01 };
    let mut grad = vec![0.0; p.data.len()];
    episode_loss(&p, &inputs, &targets, coefs, 1.0, Some(&mut grad));
    let mut worst = 0.0f64;
    for k in 0..p.data.len() {
        let at = |delta: f64| {
            let mut q = p.clone();
            q.data[k] += delta;
            episode_loss(&q, &inputs, &targets, coefs, 1.0, None).total
        };
        let num = (at(h) - at(-h)) / (2.0 * h);
        let scale = num.abs().max(grad[k].abs()).max(GRAD_FLOOR);
        worst = worst.max((num - grad[k]).abs() / scale);
    }
    worst
}

// ------------------------------------------------------------------ belief

fn covers(bubble: &Region, part: &Region) -> bool {
    let d = ((bubble.cx - part.cx).powi(2) + (bubble.cy - part.cy).powi(2)).sqrt();
    d + part.r <= bubble.r + 1e-12
}

/// Belief update checks on one random case: grasp stays in [0, 1]; a node
/// covered by a bubble never loses grasp and reaches its floor; with
/// uninformative tables uncovered nodes keep their grasp exactly.
pub fn check_belief_case(world: &World, rng: &mut ChaCha8Rng) -> Result<(), String> {
    let g = &world.grammar;
    let scene = &world.scenes[rng.random_range(0..world.scenes.len())];
    let noise = NoiseConfig { seed: rng.random(), ..world.noise };
    let pg_m = Performer::new(world.performer).interpret(scene, g, &noise).unwrap();
    let detected: Vec<NodeId> = pg_m.nodes().iter().copied().collect();
    if detected.is_empty() {
        return Ok(());
    }
    let mut history = DialogHistory::default();
    for _ in 0..rng.random_range(0..6) {
        let a = BubbleAction {
            attention: detected[rng.random_range(0..detected.len())],
            act: Process::ALL[rng.random_range(0..3)],
            space: rng.random_range(0..3),
            scale: rng.random_range(0..3),
        };
        history.push("q".into(), Bubble::realize(a, &history, &pg_m).unwrap());
    }
    let questions: Vec<String> = world.catalogs.values().flat_map(|c| c.questions.iter().map(|q| q.id.clone())).collect();
    let question = questions[rng.random_range(0..questions.len())].clone();
    let informative = rng.random_bool(0.5);
    let mut tables = LikelihoodTables::uninformative();
    for _ in 0..rng.random_range(0..20) {
        let v = NodeId(rng.random_range(0..g.node_count() as u32));
        let (a, b) = if informative {
            (rng.random_range(0.01..0.99), rng.random_range(0.01..0.99))
        } else {
            let x = rng.random_range(0.01..0.99);
            (x, x)
        };
        if rng.random_bool(0.5) {
            tables.set_question_row(&questions[rng.random_range(0..questions.len())], v, a, b);
        } else if let Some(bubble) = history.bubbles.first() {
            let sig = xtom_core::belief::bubble_signature(g, &bubble.action);
            tables.set_bubble_row(&sig, v, a, b);
        }
    }
    let mut belief: BeliefState = xtom_core::belief::init_belief(g);
    for v in g.node_ids() {
        let p = match rng.random_range(0..4) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.random_range(0.0..=1.0),
        };
        belief.set_grasp(v, p);
    }
    let next = update_belief(&belief, &question, &history, &tables, g, &pg_m, &world.belief);
    for v in g.node_ids() {
        let (old, new) = (belief.grasp(v), next.grasp(v));
        if !(0.0..=1.0).contains(&new) {
            return Err(format!("grasp {new} out of range"));
        }
        let floor = pg_m.detection(v).and_then(|det| {
            history
                .bubbles
                .iter()
                .filter(|b| covers(&b.region, &det.region))
                .map(|b| {
                    if b.sigma2() >= 9.0 {
                        world.belief.strong_reveal_floor
                    } else {
                        world.belief.light_reveal_floor
                    }
                })
                .reduce(f64::max)
        });
        match floor {
            Some(f) if new < old.max(f) => {
                return Err(format!("covered node {} fell to {new} from {old} (floor {f})", g.name(v)));
            }
            None if !informative && new != old => {
                return Err(format!("uninformative update moved {} from {old} to {new}", g.name(v)));
            }
            _ => {}
        }
    }
    if next.turn != belief.turn + 1 {
        return Err("turn not advanced".into());
    }
    Ok(())
}

