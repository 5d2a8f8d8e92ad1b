//! Scenario ingredients encoded as data: task colors, the manipulation
//! distractor catalog and the driving trigger objects.

/// Block and bowl colors used by the pick-and-place task.
pub const TASK_COLORS: [&str; 11] =
    ["blue", "red", "green", "yellow", "brown", "gray", "cyan", "orange", "purple", "pink", "white"];

/// Unexpected entities placed on or beside the road.
pub const STRANGE_OBJECTS: [&str; 5] = ["airplane", "boat", "elephant", "robot", "train"];

pub const STRANGE_OBJECT_PREDICATES: [&str; 2] = ["on the road", "in an adjacent lane"];

/// Predicates given to background scenery detections.
pub const BACKGROUND_PREDICATES: [&str; 9] = [
    "on the road",
    "near the road",
    "by the road",
    "on the sidewalk",
    "in an adjacent lane",
    "on the bridge",
    "on the side of the road",
    "crossing the road",
    "",
];

pub const STOP_SIGN_PREDICATES: [&str; 2] = ["at the intersection", "on the side of the road"];
pub const TRAFFIC_LIGHT_PREDICATES: [&str; 2] = ["at the intersection", "above the road"];

pub const BILLBOARD: &str = "on a billboard";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resembles {
    Block,
    Bowl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistractorRole {
    Neutral,
    /// Visually similar to task objects of the listed colors.
    Semantic { resembles: Resembles, colors: &'static [&'static str] },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Distractor {
    pub label: &'static str,
    pub role: DistractorRole,
}

impl Distractor {
    /// Whether this object could be confused with the task's blocks or bowl.
    pub fn confuses(&self, block_color: &str, bowl_color: &str) -> bool {
        match self.role {
            DistractorRole::Neutral => false,
            DistractorRole::Semantic { resembles: Resembles::Block, colors } => colors.contains(&block_color),
            DistractorRole::Semantic { resembles: Resembles::Bowl, colors } => colors.contains(&bowl_color),
        }
    }
}

const fn semantic(label: &'static str, resembles: Resembles, colors: &'static [&'static str]) -> Distractor {
    Distractor { label, role: DistractorRole::Semantic { resembles, colors } }
}

const fn neutral(label: &'static str) -> Distractor {
    Distractor { label, role: DistractorRole::Neutral }
}

pub const DISTRACTORS: [Distractor; 24] = [
    semantic("android toy", Resembles::Block, &["green"]),
    semantic("ball puzzle", Resembles::Bowl, &["blue"]),
    neutral("black sandal"),
    semantic("bull figure", Resembles::Block, &["brown"]),
    semantic("butterfinger chocolate", Resembles::Block, &["yellow", "orange"]),
    neutral("c-clamp"),
    neutral("can opener"),
    semantic("dog toy statue", Resembles::Block, &["white"]),
    neutral("honey dipper"),
    semantic("magnifying glass with green ring", Resembles::Bowl, &["green"]),
    neutral("mario figure"),
    neutral("nintendo 3ds"),
    semantic("nintendo cartridge", Resembles::Block, &["gray"]),
    semantic("pepsi next box", Resembles::Block, &["blue"]),
    semantic("pepsi wild cherry box", Resembles::Block, &["red"]),
    semantic("pink towel", Resembles::Block, &["pink", "white"]),
    semantic("porcelain spoon", Resembles::Bowl, &["white"]),
    semantic("purple tape", Resembles::Bowl, &["purple"]),
    neutral("flashlight"),
    semantic("red cup", Resembles::Bowl, &["red"]),
    neutral("rocket raccoon figure"),
    neutral("screw driver"),
    semantic("silver tape", Resembles::Bowl, &["gray"]),
    semantic("spatula with purple head", Resembles::Block, &["purple"]),
];

pub fn task_spec(block_color: &str, bowl_color: &str) -> String {
    format!("put the {block_color} blocks in a {bowl_color} bowl")
}

/// Recover `(block_color, bowl_color)` from a task specification.
pub fn parse_task_spec(spec: &str) -> Option<(&str, &str)> {
    let rest = spec.trim().strip_prefix("put the ")?;
    let (block, rest) = rest.split_once(" blocks in ")?;
    let rest = rest.strip_prefix("a ").or_else(|| rest.strip_prefix("an "))?;
    let bowl = rest.strip_suffix(" bowl")?;
    Some((block, bowl))
}
