//! Game orchestration: the world a session plays in, the two-phase session
//! state machine, transcripts, simulated play, training and ablation runs.

pub mod ablation;
pub mod report;
pub mod session;
pub mod simulate;
pub mod training;
pub mod transcript;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aog::{AogGrammar, NodeId};
use crate::belief::{BeliefConfig, LikelihoodTables};
use crate::error::{Error, ErrorCode, Result};
use crate::performer::{parse_scenes, NoiseConfig, PerformerConfig, Scene};
use crate::policy::ActionScope;
use crate::simuser::{build_catalog, parse_tasks, QuestionCatalog, Task};

pub use session::{GameSession, Mode, Phase, Selection};
pub use transcript::{BubbleWire, Event, GameTranscript};

pub const GRAMMAR_FILE: &str = "lsp_body.aog";
pub const SCENES_FILE: &str = "scenes.txt";
pub const TASKS_FILE: &str = "tasks.txt";
pub const PROFILE_FILE: &str = "profile.txt";
pub const TABLES_FILE: &str = "likelihoods.json";

pub mod fixtures {
    pub const GRAMMAR: &str = include_str!("../../data/lsp_body.aog");
    pub const SCENES: &str = include_str!("../../data/scenes.txt");
    pub const TASKS: &str = include_str!("../../data/tasks.txt");
    pub const PROFILE: &str = include_str!("../../data/profile.txt");
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    pub turn_limit: u32,
    /// Failed attempts after which phase one ends.
    pub patience: u32,
}

impl Default for GameConfig {
    fn default() -> Self {
        GameConfig {
            turn_limit: 30,
            patience: 30,
        }
    }
}

/// Everything shared, read-only, by the sessions of one deployment.
#[derive(Debug, Clone)]
pub struct World {
    pub grammar: AogGrammar,
    pub scenes: Vec<Scene>,
    pub tasks: Vec<Task>,
    pub catalogs: BTreeMap<String, QuestionCatalog>,
    pub tables: LikelihoodTables,
    pub noise: NoiseConfig,
    pub performer: PerformerConfig,
    pub belief: BeliefConfig,
    pub game: GameConfig,
}

impl World {
    pub fn new(grammar: AogGrammar, scenes: Vec<Scene>, tasks: Vec<Task>) -> Self {
        let catalogs = tasks
            .iter()
            .map(|t| (t.id.clone(), build_catalog(&grammar, t)))
            .collect();
        World {
            grammar,
            scenes,
            tasks,
            catalogs,
            tables: LikelihoodTables::uninformative(),
            noise: NoiseConfig::default(),
            performer: PerformerConfig::default(),
            belief: BeliefConfig::default(),
            game: GameConfig::default(),
        }
    }

    /// The bundled body-pose grammar, scenes and tasks.
    pub fn fixture() -> Self {
        let grammar = AogGrammar::parse(fixtures::GRAMMAR).expect("bundled grammar parses");
        let scenes = parse_scenes(fixtures::SCENES, &grammar).expect("bundled scenes parse");
        let tasks = parse_tasks(fixtures::TASKS, &grammar).expect("bundled tasks parse");
        World::new(grammar, scenes, tasks)
    }

    /// Loads grammar, scenes and tasks from a data directory, plus
    /// likelihood tables when present.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p)
                .map_err(|e| Error::new(ErrorCode::ConfigError, format!("{}: {e}", p.display())))
        };
        let grammar = AogGrammar::parse(&read(GRAMMAR_FILE)?)?;
        let scenes = parse_scenes(&read(SCENES_FILE)?, &grammar)?;
        let tasks = parse_tasks(&read(TASKS_FILE)?, &grammar)?;
        let mut world = World::new(grammar, scenes, tasks);
        if dir.join(TABLES_FILE).exists() {
            world.tables = LikelihoodTables::from_json(&read(TABLES_FILE)?, &world.grammar)?;
        }
        Ok(world)
    }

    pub fn scene(&self, id: &str) -> Result<&Scene> {
        self.scenes
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| Error::new(ErrorCode::UnknownScene, format!("no scene `{id}`")))
    }

    pub fn task(&self, id: &str) -> Result<&Task> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::new(ErrorCode::UnknownTask, format!("no task `{id}`")))
    }

    /// Nodes bubbles may attend to under the configured scope.
    pub fn relevant_nodes(&self, task_id: &str, scope: ActionScope) -> Result<BTreeSet<NodeId>> {
        Ok(match scope {
            ActionScope::Critical => self.task(task_id)?.critical.iter().copied().collect(),
            ActionScope::Catalog => self.catalog(task_id)?.subjects(),
        })
    }

    pub fn catalog(&self, task_id: &str) -> Result<&QuestionCatalog> {
        self.catalogs
            .get(task_id)
            .ok_or_else(|| Error::new(ErrorCode::UnknownTask, format!("no task `{task_id}`")))
    }
}

/// SplitMix64 step; derives independent per-game seeds from a run seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
