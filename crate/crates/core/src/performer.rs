//! Simulated image interpretation.
//!
//! Scenes carry ground-truth part placements; the performer turns one into
//! the machine's parse graph through three processes: direct detection of
//! terminals (alpha), bottom-up binding of detected children (beta) and
//! top-down inference from a detected parent (gamma). A [`NoiseConfig`]
//! decides which detections are missed or wrong.
//!
//! Random draws happen in a fixed order so that a parse can be replayed
//! from its seed:
//!
//! 1. terminals in declaration order, each via [`alpha_detect`];
//! 2. non-terminals deepest first via [`beta_infer`] (no draws);
//! 3. remaining annotated nodes parents-first via [`gamma_infer`].

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::aog::{AogGrammar, DetectionRecord, NodeId, ParseGraph, Process, Region};
use crate::error::{fail, Error, ErrorCode, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    /// Ground-truth answer for the scene's primary task.
    pub task_label: String,
    /// Answers for other tasks, keyed by task id.
    pub labels: BTreeMap<String, String>,
    pub parts: BTreeMap<NodeId, Region>,
    pub attributes: BTreeMap<NodeId, BTreeMap<String, String>>,
    pub image_ref: Option<String>,
    grammar: u64,
}

impl Scene {
    pub fn new(id: impl Into<String>, task_label: impl Into<String>, grammar: &AogGrammar) -> Self {
        Scene {
            id: id.into(),
            task_label: task_label.into(),
            labels: BTreeMap::new(),
            parts: BTreeMap::new(),
            attributes: BTreeMap::new(),
            image_ref: None,
            grammar: grammar.hash().short(),
        }
    }

    pub fn grammar_tag(&self) -> u64 {
        self.grammar
    }

    /// The ground-truth answer for `task_id`, falling back to the primary label.
    pub fn label_for(&self, task_id: &str) -> &str {
        self.labels
            .get(task_id)
            .map(String::as_str)
            .unwrap_or(&self.task_label)
    }
}

/// Parses a scene file. Records:
///
/// ```text
/// scene <id> <task-label> [image-ref]
/// part <node-id> <cx> <cy> <r>
/// label <task-id> <value>
/// attr <node-id> <slot> <value>
/// ```
pub fn parse_scenes(text: &str, grammar: &AogGrammar) -> Result<Vec<Scene>> {
    let mut scenes: Vec<Scene> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let Some(&keyword) = tokens.first() else {
            continue;
        };
        let schema = |msg: &str| Error::new(ErrorCode::SchemaError, format!("line {lineno}: {msg}"));
        let node = |name: &str| {
            grammar.lookup(name).ok_or_else(|| {
                Error::new(
                    ErrorCode::GrammarMismatch,
                    format!("line {lineno}: node `{name}` is not in the grammar"),
                )
            })
        };
        match keyword {
            "scene" => {
                if !(3..=4).contains(&tokens.len()) {
                    return Err(schema("expected `scene <id> <task-label> [image-ref]`"));
                }
                if scenes.iter().any(|s| s.id == tokens[1]) {
                    return Err(schema("duplicate scene id"));
                }
                let mut scene = Scene::new(tokens[1], tokens[2], grammar);
                scene.image_ref = tokens.get(3).map(|s| s.to_string());
                scenes.push(scene);
            }
            "part" | "label" | "attr" => {
                let Some(scene) = scenes.last_mut() else {
                    return Err(schema("record before any `scene` line"));
                };
                match keyword {
                    "part" => {
                        if tokens.len() != 5 {
                            return Err(schema("expected `part <node-id> <cx> <cy> <r>`"));
                        }
                        let id = node(tokens[1])?;
                        let num = |s: &str| s.parse::<f64>().map_err(|_| schema("bad number"));
                        let region = Region::new(num(tokens[2])?, num(tokens[3])?, num(tokens[4])?)
                            .map_err(|e| schema(&e.message))?;
                        scene.parts.insert(id, region);
                    }
                    "label" => {
                        if tokens.len() != 3 {
                            return Err(schema("expected `label <task-id> <value>`"));
                        }
                        scene.labels.insert(tokens[1].into(), tokens[2].into());
                    }
                    _ => {
                        if tokens.len() != 4 {
                            return Err(schema("expected `attr <node-id> <slot> <value>`"));
                        }
                        let id = node(tokens[1])?;
                        scene
                            .attributes
                            .entry(id)
                            .or_default()
                            .insert(tokens[2].into(), tokens[3].into());
                    }
                }
            }
            other => return Err(schema(&format!("unknown record `{other}`"))),
        }
    }
    Ok(scenes)
}

pub fn write_scenes(scenes: &[Scene], grammar: &AogGrammar) -> String {
    let mut out = String::new();
    for s in scenes {
        match &s.image_ref {
            Some(img) => writeln!(out, "scene {} {} {img}", s.id, s.task_label).unwrap(),
            None => writeln!(out, "scene {} {}", s.id, s.task_label).unwrap(),
        }
        for (task, value) in &s.labels {
            writeln!(out, "label {task} {value}").unwrap();
        }
        for (id, r) in &s.parts {
            writeln!(
                out,
                "part {} {:.6} {:.6} {:.6}",
                grammar.name(*id),
                r.cx,
                r.cy,
                r.r
            )
            .unwrap();
        }
        for (id, slots) in &s.attributes {
            for (slot, value) in slots {
                writeln!(out, "attr {} {slot} {value}", grammar.name(*id)).unwrap();
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub miss_rate: f64,
    pub corrupt_rate: f64,
    pub region_jitter: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            miss_rate: 0.1,
            corrupt_rate: 0.15,
            region_jitter: 0.01,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn noiseless(seed: u64) -> Self {
        NoiseConfig {
            miss_rate: 0.0,
            corrupt_rate: 0.0,
            region_jitter: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = |v: f64| (0.0..=1.0).contains(&v);
        if !p(self.miss_rate) || !p(self.corrupt_rate) {
            return fail(ErrorCode::ConfigError, "noise probabilities must lie in [0,1]");
        }
        if !(self.region_jitter >= 0.0 && self.region_jitter.is_finite()) {
            return fail(ErrorCode::ConfigError, "region jitter must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformerConfig {
    /// Fraction of children that must be detected before beta binds a node.
    pub binding_threshold: f64,
    pub gamma_discount: f64,
}

impl Default for PerformerConfig {
    fn default() -> Self {
        PerformerConfig {
            binding_threshold: 0.5,
            gamma_discount: 0.8,
        }
    }
}

fn clamp_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Direct detection of a terminal. Draws, in order: miss uniform; then, if
/// detected, two jitter normals, the corruption uniform, the corruption
/// angle (only when corrupted), and the confidence uniform.
pub fn alpha_detect(
    grammar: &AogGrammar,
    node: NodeId,
    scene: &Scene,
    noise: &NoiseConfig,
    rng: &mut impl Rng,
) -> Result<Option<DetectionRecord>> {
    if !grammar.is_terminal(node) {
        return fail(
            ErrorCode::NotTerminal,
            format!("`{}` is not a terminal", grammar.name(node)),
        );
    }
    let Some(truth) = scene.parts.get(&node) else {
        return Ok(None);
    };
    if rng.random::<f64>() < noise.miss_rate {
        return Ok(None);
    }
    let dx: f64 = rng.sample::<f64, _>(StandardNormal) * noise.region_jitter;
    let dy: f64 = rng.sample::<f64, _>(StandardNormal) * noise.region_jitter;
    let correct = rng.random::<f64>() >= noise.corrupt_rate;
    let (mut cx, mut cy) = (truth.cx + dx, truth.cy + dy);
    if !correct {
        let theta = rng.random::<f64>() * 2.0 * PI;
        cx += 2.0 * truth.r * theta.cos();
        cy += 2.0 * truth.r * theta.sin();
    }
    let confidence = 0.6 + 0.4 * rng.random::<f64>();
    Ok(Some(DetectionRecord {
        process: Process::Alpha,
        confidence,
        region: Region {
            cx: clamp_unit(cx),
            cy: clamp_unit(cy),
            r: truth.r,
        },
        correct,
    }))
}

/// Smallest circle centred on the mean centre that encloses every region.
pub fn bounding_region(regions: &[Region]) -> Option<Region> {
    if regions.is_empty() {
        return None;
    }
    let n = regions.len() as f64;
    let cx = regions.iter().map(|r| r.cx).sum::<f64>() / n;
    let cy = regions.iter().map(|r| r.cy).sum::<f64>() / n;
    let centre = Region { cx, cy, r: 0.0 };
    let r = regions
        .iter()
        .map(|reg| centre.distance_to(reg) + reg.r)
        .fold(0.0f64, f64::max)
        .min(0.5);
    Some(Region { cx, cy, r })
}

/// Bottom-up binding. `child_records` are the detections of `node`'s
/// decomposition children that were found. OR nodes bind on any child.
pub fn beta_infer(
    grammar: &AogGrammar,
    node: NodeId,
    child_records: &[DetectionRecord],
    binding_threshold: f64,
) -> Result<Option<DetectionRecord>> {
    let total = grammar.children(node).len();
    if total == 0 {
        return fail(
            ErrorCode::NoChildren,
            format!("`{}` has no decomposition children", grammar.name(node)),
        );
    }
    if child_records.is_empty() {
        return Ok(None);
    }
    let coverage = child_records.len() as f64 / total as f64;
    let binds = match grammar.node(node).kind {
        crate::aog::NodeKind::Or => true,
        _ => coverage >= binding_threshold,
    };
    if !binds {
        return Ok(None);
    }
    let regions: Vec<Region> = child_records.iter().map(|r| r.region).collect();
    let confidence =
        child_records.iter().map(|r| r.confidence).sum::<f64>() / child_records.len() as f64;
    Ok(Some(DetectionRecord {
        process: Process::Beta,
        confidence,
        region: bounding_region(&regions).expect("non-empty"),
        correct: child_records.iter().all(|r| r.correct),
    }))
}

/// Top-down inference from a detected parent. Draws one corruption uniform
/// when the node is annotated.
pub fn gamma_infer(
    grammar: &AogGrammar,
    node: NodeId,
    parent: Option<&DetectionRecord>,
    scene: &Scene,
    noise: &NoiseConfig,
    gamma_discount: f64,
    rng: &mut impl Rng,
) -> Result<Option<DetectionRecord>> {
    let Some(parent) = parent else {
        return fail(
            ErrorCode::NoParent,
            format!("`{}` has no detected parent", grammar.name(node)),
        );
    };
    let Some(truth) = scene.parts.get(&node) else {
        return Ok(None);
    };
    let fresh = rng.random::<f64>() >= noise.corrupt_rate;
    Ok(Some(DetectionRecord {
        process: Process::Gamma,
        confidence: (parent.confidence * gamma_discount).clamp(0.0, 1.0),
        region: *truth,
        correct: parent.correct && fresh,
    }))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Performer {
    pub config: PerformerConfig,
}

impl Performer {
    pub fn new(config: PerformerConfig) -> Self {
        Performer { config }
    }

    /// Produces the machine's parse graph for `scene`. Deterministic in
    /// `noise.seed`.
    pub fn interpret(
        &self,
        scene: &Scene,
        grammar: &AogGrammar,
        noise: &NoiseConfig,
    ) -> Result<ParseGraph> {
        if scene.grammar_tag() != grammar.hash().short() {
            return fail(
                ErrorCode::GrammarMismatch,
                format!("scene `{}` was annotated against another grammar", scene.id),
            );
        }
        noise.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        let mut found: BTreeMap<NodeId, DetectionRecord> = BTreeMap::new();

        for v in grammar.node_ids().filter(|&v| grammar.is_terminal(v)) {
            if let Some(rec) = alpha_detect(grammar, v, scene, noise, &mut rng)? {
                found.insert(v, rec);
            }
        }

        let mut bottom_up: Vec<NodeId> = grammar
            .node_ids()
            .filter(|&v| !grammar.is_terminal(v))
            .collect();
        bottom_up.sort_by_key(|&v| (std::cmp::Reverse(grammar.depth(v)), v));
        for v in bottom_up {
            let records: Vec<DetectionRecord> = grammar
                .children(v)
                .iter()
                .filter_map(|c| found.get(c).copied())
                .collect();
            if let Some(rec) = beta_infer(grammar, v, &records, self.config.binding_threshold)? {
                found.insert(v, rec);
            }
        }

        for &v in grammar.topological() {
            if found.contains_key(&v) || !scene.parts.contains_key(&v) {
                continue;
            }
            let parent = grammar.parents(v).iter().find_map(|p| found.get(p)).copied();
            if parent.is_none() {
                continue;
            }
            if let Some(rec) = gamma_infer(
                grammar,
                v,
                parent.as_ref(),
                scene,
                noise,
                self.config.gamma_discount,
                &mut rng,
            )? {
                found.insert(v, rec);
            }
        }

        let mut pg = ParseGraph::empty(grammar);
        for (v, rec) in found {
            pg.insert_detection(v, rec);
            if let Some(attrs) = scene.attributes.get(&v) {
                for (slot, value) in attrs {
                    pg.set_attribute(v, slot, value);
                }
            }
        }
        pg.close_edges(grammar);
        Ok(pg)
    }
}

/// Options for [`generate_scenes`].
#[derive(Debug, Clone)]
pub struct SceneGenConfig {
    pub count: usize,
    pub labels: Vec<String>,
    /// Probability that a non-root part is left unannotated.
    pub occlusion: f64,
    pub seed: u64,
}

/// Random scenes laid out radially from the root: each node's children sit
/// on a ring of half its radius.
pub fn generate_scenes(grammar: &AogGrammar, config: &SceneGenConfig) -> Result<Vec<Scene>> {
    if config.labels.is_empty() {
        return fail(ErrorCode::ConfigError, "scene generation needs at least one label");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut scenes = Vec::with_capacity(config.count);
    for i in 0..config.count {
        let label = &config.labels[rng.random_range(0..config.labels.len())];
        let mut scene = Scene::new(format!("scene-{i:04}"), label.clone(), grammar);
        let scale = 0.8 + 0.3 * rng.random::<f64>();
        let root = grammar.root();
        let root_region = Region {
            cx: 0.5 + 0.1 * (rng.random::<f64>() - 0.5),
            cy: 0.5 + 0.1 * (rng.random::<f64>() - 0.5),
            r: (0.4 * scale).min(0.5),
        };
        let mut placed: BTreeMap<NodeId, Region> = BTreeMap::from([(root, root_region)]);
        for &v in grammar.topological() {
            let Some(&parent_region) = placed.get(&v) else {
                continue;
            };
            let kids = grammar.children(v);
            let spin = 0.3 * (rng.random::<f64>() - 0.5);
            for (k, &c) in kids.iter().enumerate() {
                if placed.contains_key(&c) {
                    continue;
                }
                let (ring, r) = if kids.len() == 1 {
                    (0.5 * parent_region.r, 0.45 * parent_region.r)
                } else {
                    (0.5 * parent_region.r, parent_region.r / (kids.len() as f64).max(2.0))
                };
                let angle = -PI / 2.0 + spin + 2.0 * PI * k as f64 / kids.len() as f64;
                placed.insert(
                    c,
                    Region {
                        cx: clamp_unit(parent_region.cx + ring * angle.cos()),
                        cy: clamp_unit(parent_region.cy + ring * angle.sin()),
                        r: r.clamp(0.005, 0.5),
                    },
                );
            }
        }
        for (v, region) in placed {
            if v != root && rng.random::<f64>() < config.occlusion {
                continue;
            }
            scene.parts.insert(v, region);
        }
        scenes.push(scene);
    }
    Ok(scenes)
}
