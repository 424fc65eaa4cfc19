//! Phase-two evaluation: prediction questions, the user's model of the
//! machine, and the justified-trust metrics.
//!
//! For game `i` and process `z` the per-term increments are
//!
//! * `dJPT(i,z) = |MinU(i,z,+) ∩ M(i,+)| / |M(i,+)|`
//! * `dJNT(i,z) = |MinU(i,z,-) ∩ M(i,-)| / |M(i,-)|`
//! * `dRc(i,z)  = (|MinU(i,z,+) ∩ M(i,z,+)| + |MinU(i,z,-) ∩ M(i,z,-)|) / D(i)`
//!
//! where `M(i,±)` is the signed partition of the machine's parse graph,
//! `M(i,z,±)` the signed partition of its process-`z` slice, and `D(i)` the
//! total size of those six slices. Each metric is `(1/N) Σ_i Σ_z` of its
//! increments; terms with an empty denominator are skipped.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aog::{pg_intersect, pg_size, signed_partition, AogGrammar, NodeId, ParseGraph, Process};
use crate::error::{fail, ErrorCode, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EvalKind {
    DetectSuccess,
    Influence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub id: String,
    pub kind: EvalKind,
    pub subject: NodeId,
    pub process: Process,
    /// `yes`/`no` for detection questions, node ids for influence questions.
    pub choices: Vec<String>,
}

/// One detection question per node of `pg_m` under its own process, and one
/// influence question per bound (beta) or inferred (gamma) non-terminal.
pub fn generate_eval_questions(pg_m: &ParseGraph, grammar: &AogGrammar) -> Result<Vec<EvalQuestion>> {
    if pg_m.nodes().is_empty() {
        return fail(ErrorCode::EmptyPg, "no detections to ask about");
    }
    let mut out = Vec::new();
    for (&v, det) in pg_m.detections() {
        out.push(EvalQuestion {
            id: format!("d-{}", grammar.name(v)),
            kind: EvalKind::DetectSuccess,
            subject: v,
            process: det.process,
            choices: vec!["yes".into(), "no".into()],
        });
    }
    for (&v, det) in pg_m.detections() {
        if grammar.is_terminal(v) {
            continue;
        }
        let influencers: Vec<NodeId> = match det.process {
            Process::Beta => grammar.children(v).iter().copied().filter(|c| pg_m.contains(*c)).collect(),
            Process::Gamma => grammar.parents(v).iter().copied().filter(|p| pg_m.contains(*p)).collect(),
            Process::Alpha => continue,
        };
        if influencers.is_empty() {
            continue;
        }
        out.push(EvalQuestion {
            id: format!("i-{}", grammar.name(v)),
            kind: EvalKind::Influence,
            subject: v,
            process: det.process,
            choices: influencers.iter().map(|&c| grammar.name(c).to_owned()).collect(),
        });
    }
    Ok(out)
}

/// The user's model of the machine for one game: per process, the nodes
/// the user expects the machine to get right and to get wrong.
#[derive(Debug, Clone, PartialEq)]
pub struct MinUEstimate {
    pub positive: [ParseGraph; 3],
    pub negative: [ParseGraph; 3],
}

impl MinUEstimate {
    pub fn empty(grammar: &AogGrammar) -> Self {
        let e = || ParseGraph::empty(grammar);
        MinUEstimate {
            positive: [e(), e(), e()],
            negative: [e(), e(), e()],
        }
    }

    pub fn positive(&self, z: Process) -> &ParseGraph {
        &self.positive[z.index()]
    }

    pub fn negative(&self, z: Process) -> &ParseGraph {
        &self.negative[z.index()]
    }
}

/// Resolves `(question id, choice)` pairs against the generated questions.
pub fn resolve_answers(
    questions: &[EvalQuestion],
    answers: &[(String, String)],
) -> Result<Vec<(EvalQuestion, String)>> {
    answers
        .iter()
        .map(|(id, choice)| {
            let q = questions.iter().find(|q| &q.id == id).ok_or_else(|| {
                crate::Error::new(ErrorCode::UnknownQuestion, format!("no evaluation question `{id}`"))
            })?;
            Ok((q.clone(), choice.clone()))
        })
        .collect()
}

/// Builds the user's model of the machine from phase-two answers.
pub fn assemble_minu(grammar: &AogGrammar, answers: &[(EvalQuestion, String)]) -> Result<MinUEstimate> {
    let mut minu = MinUEstimate::empty(grammar);
    for (q, choice) in answers.iter().filter(|(q, _)| q.kind == EvalKind::DetectSuccess) {
        let z = q.process.index();
        let (mine, other) = match choice.as_str() {
            "yes" => (&mut minu.positive[z], &minu.negative[z]),
            "no" => (&mut minu.negative[z], &minu.positive[z]),
            _ => {
                return fail(
                    ErrorCode::Range,
                    format!("`{choice}` is not a valid answer to {}", q.id),
                )
            }
        };
        if other.contains(q.subject) {
            return fail(
                ErrorCode::ConflictingAnswer,
                format!("`{}` answered both ways for {}", grammar.name(q.subject), q.process.as_str()),
            );
        }
        mine.insert_node(q.subject);
    }
    for (q, choice) in answers.iter().filter(|(q, _)| q.kind == EvalKind::Influence) {
        if !q.choices.contains(choice) {
            return fail(
                ErrorCode::Range,
                format!("`{choice}` is not a valid answer to {}", q.id),
            );
        }
        let Some(influencer) = grammar.lookup(choice) else {
            return fail(ErrorCode::Range, format!("unknown node `{choice}`"));
        };
        let z = q.process.index();
        let (target, opposite) = if minu.positive[z].contains(q.subject) {
            (&mut minu.positive[z], &minu.negative[z])
        } else if minu.negative[z].contains(q.subject) {
            (&mut minu.negative[z], &minu.positive[z])
        } else {
            continue;
        };
        if opposite.contains(influencer) {
            continue;
        }
        target.insert_node(influencer);
        let edges: Vec<_> = grammar.edges_between(q.subject, influencer).collect();
        for e in edges {
            target.insert_edge(grammar, e);
        }
    }
    Ok(minu)
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// dJPT(i,z); `None` when the machine has no correct detections.
pub fn delta_jpt(grammar: &AogGrammar, minu: &MinUEstimate, pg_m: &ParseGraph, z: Process) -> Result<Option<f64>> {
    let (pos, _) = signed_partition(pg_m, grammar)?;
    Ok(ratio(pg_size(&pg_intersect(minu.positive(z), &pos)?), pg_size(&pos)))
}

/// dJNT(i,z); `None` when the machine made no errors.
pub fn delta_jnt(grammar: &AogGrammar, minu: &MinUEstimate, pg_m: &ParseGraph, z: Process) -> Result<Option<f64>> {
    let (_, neg) = signed_partition(pg_m, grammar)?;
    Ok(ratio(pg_size(&pg_intersect(minu.negative(z), &neg)?), pg_size(&neg)))
}

/// Size of the machine's parse split by process and polarity.
pub fn reliance_denominator(grammar: &AogGrammar, pg_m: &ParseGraph) -> Result<usize> {
    let mut total = 0;
    for z in Process::ALL {
        let (p, n) = signed_partition(&pg_m.process_slice(grammar, z), grammar)?;
        total += pg_size(&p) + pg_size(&n);
    }
    Ok(total)
}

/// dRc(i,z); `None` when the machine's parse is empty.
pub fn delta_rc(grammar: &AogGrammar, minu: &MinUEstimate, pg_m: &ParseGraph, z: Process) -> Result<Option<f64>> {
    let den = reliance_denominator(grammar, pg_m)?;
    let (p, n) = signed_partition(&pg_m.process_slice(grammar, z), grammar)?;
    let hits = pg_size(&pg_intersect(minu.positive(z), &p)?) + pg_size(&pg_intersect(minu.negative(z), &n)?);
    Ok(ratio(hits, den))
}

/// A metric averaged over games, with its per-process parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrustMetric {
    pub total: f64,
    /// Indexed alpha, beta, gamma.
    pub by_process: [f64; 3],
}

type DeltaFn = fn(&AogGrammar, &MinUEstimate, &ParseGraph, Process) -> Result<Option<f64>>;

fn aggregate(grammar: &AogGrammar, games: &[(MinUEstimate, ParseGraph)], delta: DeltaFn) -> Result<TrustMetric> {
    if games.is_empty() {
        return fail(ErrorCode::NoGames, "trust metrics need at least one game");
    }
    let mut by_process = [0.0; 3];
    for (minu, pg_m) in games {
        for z in Process::ALL {
            if let Some(d) = delta(grammar, minu, pg_m, z)? {
                by_process[z.index()] += d;
            }
        }
    }
    let n = games.len() as f64;
    for v in &mut by_process {
        *v /= n;
    }
    Ok(TrustMetric {
        total: by_process.iter().sum(),
        by_process,
    })
}

pub fn jpt(grammar: &AogGrammar, games: &[(MinUEstimate, ParseGraph)]) -> Result<TrustMetric> {
    aggregate(grammar, games, delta_jpt)
}

pub fn jnt(grammar: &AogGrammar, games: &[(MinUEstimate, ParseGraph)]) -> Result<TrustMetric> {
    aggregate(grammar, games, delta_jnt)
}

pub fn reliance(grammar: &AogGrammar, games: &[(MinUEstimate, ParseGraph)]) -> Result<TrustMetric> {
    aggregate(grammar, games, delta_rc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfactionSurvey {
    pub usefulness: u8,
    pub sufficiency: u8,
    pub appropriate_detail: u8,
    pub confidence: u8,
    pub understandability: u8,
    pub accuracy: u8,
    pub consistency: u8,
}

impl SatisfactionSurvey {
    pub const FIELDS: [&'static str; 7] = [
        "usefulness",
        "sufficiency",
        "appropriate_detail",
        "confidence",
        "understandability",
        "accuracy",
        "consistency",
    ];

    pub fn ratings(&self) -> [u8; 7] {
        [
            self.usefulness,
            self.sufficiency,
            self.appropriate_detail,
            self.confidence,
            self.understandability,
            self.accuracy,
            self.consistency,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatisfactionRecord {
    pub session_id: String,
    pub survey: SatisfactionSurvey,
}

/// Validates a 0-9 survey and tags it with its session.
pub fn collect_satisfaction(session_id: &str, survey: SatisfactionSurvey) -> Result<SatisfactionRecord> {
    for (name, value) in SatisfactionSurvey::FIELDS.iter().zip(survey.ratings()) {
        if value > 9 {
            return fail(ErrorCode::Range, format!("{name} rating {value} is outside 0-9"));
        }
    }
    Ok(SatisfactionRecord {
        session_id: session_id.to_owned(),
        survey,
    })
}

/// Per-field means, in [`SatisfactionSurvey::FIELDS`] order.
pub fn satisfaction_means(records: &[SatisfactionRecord]) -> Option<[f64; 7]> {
    if records.is_empty() {
        return None;
    }
    let mut sums = [0.0; 7];
    for r in records {
        for (s, v) in sums.iter_mut().zip(r.survey.ratings()) {
            *s += v as f64;
        }
    }
    Some(sums.map(|s| s / records.len() as f64))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrustReport {
    pub jpt: TrustMetric,
    pub jnt: TrustMetric,
    pub rc: TrustMetric,
    pub n_games: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub es: Option<[f64; 7]>,
}

pub fn trust_report(grammar: &AogGrammar, games: &[(MinUEstimate, ParseGraph)]) -> Result<TrustReport> {
    Ok(TrustReport {
        jpt: jpt(grammar, games)?,
        jnt: jnt(grammar, games)?,
        rc: reliance(grammar, games)?,
        n_games: games.len(),
        es: None,
    })
}

/// Mean of several reports, weighted by game count.
pub fn merge_reports(reports: &[TrustReport]) -> Option<TrustReport> {
    let n: usize = reports.iter().map(|r| r.n_games).sum();
    if n == 0 {
        return None;
    }
    let mix = |pick: fn(&TrustReport) -> TrustMetric| {
        let mut by_process = [0.0; 3];
        for r in reports {
            let m = pick(r);
            for (acc, v) in by_process.iter_mut().zip(m.by_process) {
                *acc += v * r.n_games as f64 / n as f64;
            }
        }
        TrustMetric {
            total: by_process.iter().sum(),
            by_process,
        }
    };
    Some(TrustReport {
        jpt: mix(|r| r.jpt),
        jnt: mix(|r| r.jnt),
        rc: mix(|r| r.rc),
        n_games: n,
        es: None,
    })
}

/// Tab-separated table: one row per metric, columns alpha, beta, gamma, total.
pub fn format_trust_table(report: &TrustReport) -> String {
    let mut out = String::from("metric\talpha\tbeta\tgamma\ttotal\n");
    for (name, m) in [("JPT", report.jpt), ("JNT", report.jnt), ("Rc", report.rc)] {
        writeln!(
            out,
            "{name}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            m.by_process[0], m.by_process[1], m.by_process[2], m.total
        )
        .unwrap();
    }
    writeln!(out, "games\t{}", report.n_games).unwrap();
    out
}

/// Nodes of `pg` with the given polarity.
pub fn polarity_nodes(pg: &ParseGraph, correct: bool) -> BTreeSet<NodeId> {
    pg.detections()
        .iter()
        .filter(|(_, d)| d.correct == correct)
        .map(|(v, _)| *v)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aog::{DetectionRecord, Region};

    fn det(process: Process, correct: bool) -> DetectionRecord {
        DetectionRecord {
            process,
            confidence: 0.9,
            region: Region::new(0.5, 0.5, 0.1).unwrap(),
            correct,
        }
    }

    /// p -> {a, b}, all alpha children, p bound by beta.
    fn small() -> (AogGrammar, ParseGraph) {
        let g = AogGrammar::parse("node p AND p\nnode a TERM a\nnode b TERM b\nedge p a decomp\nedge p b decomp\n")
            .unwrap();
        let mut pg = ParseGraph::empty(&g);
        pg.insert_detection(NodeId(0), det(Process::Beta, true));
        pg.insert_detection(NodeId(1), det(Process::Alpha, true));
        pg.insert_detection(NodeId(2), det(Process::Alpha, true));
        pg.close_edges(&g);
        (g, pg)
    }

    #[test]
    fn question_counts() {
        let (g, pg) = small();
        let qs = generate_eval_questions(&pg, &g).unwrap();
        let detect = qs.iter().filter(|q| q.kind == EvalKind::DetectSuccess).count();
        let influence: Vec<_> = qs.iter().filter(|q| q.kind == EvalKind::Influence).collect();
        assert_eq!((detect, influence.len()), (3, 1));
        assert_eq!(influence[0].choices, vec!["a", "b"]);

        let single = pg.restrict(&g, |v| v == NodeId(1));
        assert_eq!(generate_eval_questions(&single, &g).unwrap().len(), 1);
        assert_eq!(
            generate_eval_questions(&ParseGraph::empty(&g), &g).unwrap_err().code,
            ErrorCode::EmptyPg
        );
    }

    fn answer_all(qs: &[EvalQuestion], yes: impl Fn(NodeId) -> bool) -> Vec<(EvalQuestion, String)> {
        qs.iter()
            .filter(|q| q.kind == EvalKind::DetectSuccess)
            .map(|q| (q.clone(), if yes(q.subject) { "yes" } else { "no" }.to_string()))
            .collect()
    }

    #[test]
    fn routing() {
        let g = AogGrammar::parse(
            "node r AND r\nnode a TERM a\nnode b TERM b\nnode c TERM c\nnode d TERM d\nnode e TERM e\n\
             edge r a decomp\nedge r b decomp\nedge r c decomp\nedge r d decomp\nedge r e decomp\n",
        )
        .unwrap();
        let mut pg = ParseGraph::empty(&g);
        for i in 1..6 {
            pg.insert_detection(NodeId(i), det(Process::Alpha, true));
        }
        let qs = generate_eval_questions(&pg, &g).unwrap();
        let yes = assemble_minu(&g, &answer_all(&qs, |_| true)).unwrap();
        assert!(yes.negative.iter().all(ParseGraph::is_empty));
        let no = assemble_minu(&g, &answer_all(&qs, |_| false)).unwrap();
        assert!(no.positive.iter().all(ParseGraph::is_empty));
        let mixed = assemble_minu(&g, &answer_all(&qs, |v| v.0 <= 3)).unwrap();
        assert_eq!(mixed.positive(Process::Alpha).nodes().len(), 3);
        assert_eq!(mixed.negative(Process::Alpha).nodes().len(), 2);
    }

    #[test]
    fn conflicting_answers() {
        let (g, pg) = small();
        let qs = generate_eval_questions(&pg, &g).unwrap();
        let q = qs[1].clone();
        let err = assemble_minu(&g, &[(q.clone(), "yes".into()), (q, "no".into())]).unwrap_err();
        assert_eq!(err.code, ErrorCode::ConflictingAnswer);
    }

    #[test]
    fn influence_attaches_edge() {
        let (g, pg) = small();
        let qs = generate_eval_questions(&pg, &g).unwrap();
        let mut answers = answer_all(&qs, |_| true);
        let inf = qs.iter().find(|q| q.kind == EvalKind::Influence).unwrap();
        answers.push((inf.clone(), "a".into()));
        let minu = assemble_minu(&g, &answers).unwrap();
        let beta = minu.positive(Process::Beta);
        assert_eq!(beta.nodes().len(), 2);
        assert_eq!(beta.edges().len(), 1);
        answers.push((inf.clone(), "z".into()));
        assert_eq!(assemble_minu(&g, &answers).unwrap_err().code, ErrorCode::Range);
    }

    #[test]
    fn perfect_and_empty_predictors() {
        let (g, pg) = small();
        let mut perfect = MinUEstimate::empty(&g);
        for z in Process::ALL {
            perfect.positive[z.index()] = pg.clone();
        }
        let games = vec![(perfect, pg.clone())];
        let r = trust_report(&g, &games).unwrap();
        assert_eq!(r.jpt.by_process, [1.0, 1.0, 1.0]);
        assert_eq!(r.jpt.total, 3.0);
        assert_eq!(r.jnt.total, 0.0);

        let empty = vec![(MinUEstimate::empty(&g), pg)];
        let r = trust_report(&g, &empty).unwrap();
        assert_eq!((r.jpt.total, r.jnt.total, r.rc.total), (0.0, 0.0, 0.0));
        assert_eq!(trust_report(&g, &[]).unwrap_err().code, ErrorCode::NoGames);
    }

    #[test]
    fn half_overlap() {
        // Correct alpha set: 4 nodes and 2 edges; the user hits 2 nodes and 1 edge.
        let g = AogGrammar::parse(
            "node r AND r\nnode x AND x\nnode y AND y\nnode a TERM a\nnode b TERM b\n\
             edge r x decomp\nedge r y decomp\nedge x a decomp\nedge y b decomp\n",
        )
        .unwrap();
        let mut pg = ParseGraph::empty(&g);
        for name in ["x", "y", "a", "b"] {
            pg.insert_detection(g.lookup(name).unwrap(), det(Process::Alpha, true));
        }
        pg.close_edges(&g);
        assert_eq!(pg_size(&pg), 6);
        let mut minu = MinUEstimate::empty(&g);
        minu.positive[0] = ParseGraph::induced(&g, [g.lookup("x").unwrap(), g.lookup("a").unwrap()]);
        let d = delta_jpt(&g, &minu, &pg, Process::Alpha).unwrap().unwrap();
        assert_eq!(d, 0.5);
    }

    #[test]
    fn jnt_half() {
        let (g, mut pg) = small();
        pg = pg.restrict(&g, |v| v != NodeId(0));
        pg.insert_detection(NodeId(1), det(Process::Alpha, false));
        pg.insert_detection(NodeId(2), det(Process::Alpha, false));
        let mut minu = MinUEstimate::empty(&g);
        minu.negative[0].insert_node(NodeId(1));
        assert_eq!(delta_jnt(&g, &minu, &pg, Process::Alpha).unwrap(), Some(0.5));
        // No errors at all: the term is skipped.
        let (g, clean) = small();
        assert_eq!(delta_jnt(&g, &minu, &clean, Process::Alpha).unwrap(), None);
    }

    #[test]
    fn reliance_partition_sum() {
        let (g, pg) = small();
        let mut own = MinUEstimate::empty(&g);
        for z in Process::ALL {
            own.positive[z.index()] = pg.process_slice(&g, z);
        }
        let r = reliance(&g, &[(own.clone(), pg.clone())]).unwrap();
        assert!((r.total - 1.0).abs() < 1e-12);

        // Over-predicting a node the machine never produced changes nothing.
        let mut over = own;
        over.positive[0].insert_node(NodeId(0));
        let r2 = reliance(&g, &[(over, pg)]).unwrap();
        assert!((r2.total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn satisfaction() {
        let all9 = SatisfactionSurvey {
            usefulness: 9,
            sufficiency: 9,
            appropriate_detail: 9,
            confidence: 9,
            understandability: 9,
            accuracy: 9,
            consistency: 9,
        };
        let rec = collect_satisfaction("s1", all9).unwrap();
        assert_eq!(rec.survey, all9);
        let bad = SatisfactionSurvey { accuracy: 10, ..all9 };
        assert_eq!(collect_satisfaction("s1", bad).unwrap_err().code, ErrorCode::Range);

        let recs: Vec<_> = [3, 5, 7]
            .iter()
            .map(|&u| collect_satisfaction("s", SatisfactionSurvey { usefulness: u, ..all9 }).unwrap())
            .collect();
        assert_eq!(satisfaction_means(&recs).unwrap()[0], 5.0);
    }

    #[test]
    fn table_layout() {
        let t = format_trust_table(&TrustReport::default());
        assert!(t.starts_with("metric\talpha\tbeta\tgamma\ttotal\nJPT"));
    }
}
