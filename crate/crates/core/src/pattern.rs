//! Pattern similarity features: sub-windows of the input are matched
//! against 13 reference shapes with dynamic time warping and the best match
//! per sub-window becomes a one-hot channel block.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("DTW requires non-empty sequences")]
    EmptySequence,
    #[error("sample length {0} too small; need at least 2")]
    LengthTooSmall(usize),
    #[error("window of length {0} too short to match; need at least 2")]
    WindowTooShort(usize),
    #[error("window size {size} does not divide input length {input_len}")]
    IndivisibleWindowSize { size: usize, input_len: usize },
    #[error("invalid template {id}: {reason}")]
    InvalidTemplate { id: u32, reason: String },
    #[error("expected 13 templates, got {0}")]
    TemplateCount(usize),
    #[error("template file error: {0}")]
    TemplateFile(String),
}

/// A reference shape as piecewise-linear control points over the unit
/// square: positions strictly increasing from 0 to 1, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternTemplate {
    pub id: u32,
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl PatternTemplate {
    fn new(id: u32, name: &str, points: &[(f64, f64)]) -> Self {
        PatternTemplate {
            id,
            name: name.to_string(),
            points: points.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), PatternError> {
        let fail = |reason: String| PatternError::InvalidTemplate {
            id: self.id,
            reason,
        };
        if self.points.len() < 2 {
            return Err(fail("needs at least 2 control points".into()));
        }
        let first = self.points.first().unwrap().0;
        let last = self.points.last().unwrap().0;
        if first != 0.0 || last != 1.0 {
            return Err(fail(format!(
                "positions must span [0, 1], got [{first}, {last}]"
            )));
        }
        for pair in self.points.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(fail("positions must be strictly increasing".into()));
            }
        }
        for &(_, value) in &self.points {
            if !(0.0..=1.0).contains(&value) {
                return Err(fail(format!("value {value} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Exactly 13 validated templates, sorted by id.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "Vec<PatternTemplate>", into = "Vec<PatternTemplate>")]
pub struct TemplateSet {
    templates: Vec<PatternTemplate>,
}

pub const TEMPLATE_COUNT: usize = 13;

impl TemplateSet {
    pub fn new(mut templates: Vec<PatternTemplate>) -> Result<Self, PatternError> {
        if templates.len() != TEMPLATE_COUNT {
            return Err(PatternError::TemplateCount(templates.len()));
        }
        templates.sort_by_key(|t| t.id);
        for (i, t) in templates.iter().enumerate() {
            t.validate()?;
            if i > 0 && templates[i - 1].id == t.id {
                return Err(PatternError::InvalidTemplate {
                    id: t.id,
                    reason: "duplicate id".into(),
                });
            }
        }
        Ok(TemplateSet { templates })
    }

    pub fn templates(&self) -> &[PatternTemplate] {
        &self.templates
    }

    /// Parses the JSON template file: an array of
    /// `{"id": .., "name": .., "points": [[pos, val], ..]}` objects.
    pub fn from_json(text: &str) -> Result<Self, PatternError> {
        let templates: Vec<PatternTemplate> =
            serde_json::from_str(text).map_err(|e| PatternError::TemplateFile(e.to_string()))?;
        TemplateSet::new(templates)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.templates).expect("templates serialize")
    }
}

impl TryFrom<Vec<PatternTemplate>> for TemplateSet {
    type Error = PatternError;
    fn try_from(v: Vec<PatternTemplate>) -> Result<Self, Self::Error> {
        TemplateSet::new(v)
    }
}

impl From<TemplateSet> for Vec<PatternTemplate> {
    fn from(set: TemplateSet) -> Self {
        set.templates
    }
}

/// The built-in shape dictionary. The exact geometry is a configurable
/// approximation of the usual chart-pattern vocabulary; callers can load a
/// different set from JSON, and results depend on this choice.
pub fn default_templates() -> TemplateSet {
    let templates = vec![
        PatternTemplate::new(1, "uptrend", &[(0.0, 0.0), (1.0, 1.0)]),
        PatternTemplate::new(2, "downtrend", &[(0.0, 1.0), (1.0, 0.0)]),
        PatternTemplate::new(3, "flat", &[(0.0, 0.5), (1.0, 0.5)]),
        PatternTemplate::new(4, "v-bottom", &[(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)]),
        PatternTemplate::new(5, "v-top", &[(0.0, 0.0), (0.5, 1.0), (1.0, 0.0)]),
        PatternTemplate::new(
            6,
            "double-bottom",
            &[(0.0, 1.0), (0.25, 0.0), (0.5, 0.6), (0.75, 0.0), (1.0, 1.0)],
        ),
        PatternTemplate::new(
            7,
            "double-top",
            &[(0.0, 0.0), (0.25, 1.0), (0.5, 0.4), (0.75, 1.0), (1.0, 0.0)],
        ),
        PatternTemplate::new(
            8,
            "head-and-shoulders",
            &[
                (0.0, 0.0),
                (0.15, 0.6),
                (0.3, 0.3),
                (0.5, 1.0),
                (0.7, 0.3),
                (0.85, 0.6),
                (1.0, 0.0),
            ],
        ),
        PatternTemplate::new(
            9,
            "inverse-head-and-shoulders",
            &[
                (0.0, 1.0),
                (0.15, 0.4),
                (0.3, 0.7),
                (0.5, 0.0),
                (0.7, 0.7),
                (0.85, 0.4),
                (1.0, 1.0),
            ],
        ),
        PatternTemplate::new(
            10,
            "step-up",
            &[(0.0, 0.1), (0.45, 0.15), (0.55, 0.85), (1.0, 0.9)],
        ),
        PatternTemplate::new(
            11,
            "step-down",
            &[(0.0, 0.9), (0.45, 0.85), (0.55, 0.15), (1.0, 0.1)],
        ),
        PatternTemplate::new(
            12,
            "cup",
            &[(0.0, 1.0), (0.25, 0.35), (0.5, 0.2), (0.75, 0.35), (1.0, 1.0)],
        ),
        PatternTemplate::new(
            13,
            "cap",
            &[(0.0, 0.0), (0.25, 0.65), (0.5, 0.8), (0.75, 0.65), (1.0, 0.0)],
        ),
    ];
    TemplateSet::new(templates).expect("built-in templates are valid")
}

/// Sub-window sizes used for multi-granularity matching; each must divide
/// the input length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubWindowPlan {
    pub window_sizes: Vec<usize>,
}

impl Default for SubWindowPlan {
    fn default() -> Self {
        SubWindowPlan {
            window_sizes: vec![672, 336, 96, 48, 24, 12],
        }
    }
}

/// DTW distance with absolute-difference local cost and the standard
/// three-predecessor recurrence. No path window constraint; O(len_a) memory.
pub fn dtw_distance(a: &[f64], b: &[f64]) -> Result<f64, PatternError> {
    if a.is_empty() || b.is_empty() {
        return Err(PatternError::EmptySequence);
    }
    let width = a.len();
    let mut prev = vec![f64::INFINITY; width + 1];
    let mut curr = vec![f64::INFINITY; width + 1];
    prev[0] = 0.0;
    for &bv in b {
        curr[0] = f64::INFINITY;
        for j in 1..=width {
            let cost = (a[j - 1] - bv).abs();
            curr[j] = cost + prev[j].min(curr[j - 1]).min(prev[j - 1]);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[width])
}

/// Discretizes a template into `length` samples by linear interpolation at
/// positions k/(length-1).
pub fn sample_template(template: &PatternTemplate, length: usize) -> Result<Vec<f64>, PatternError> {
    if length < 2 {
        return Err(PatternError::LengthTooSmall(length));
    }
    let points = &template.points;
    let mut out = Vec::with_capacity(length);
    let mut seg = 0usize;
    for k in 0..length {
        let pos = k as f64 / (length - 1) as f64;
        while seg + 2 < points.len() && points[seg + 1].0 < pos {
            seg += 1;
        }
        let (x0, y0) = points[seg];
        let (x1, y1) = points[seg + 1];
        let t = ((pos - x0) / (x1 - x0)).clamp(0.0, 1.0);
        out.push(y0 + t * (y1 - y0));
    }
    Ok(out)
}

/// Min-max normalizes a window to [0, 1]; constant windows become all 0.5
/// so they match the flat template exactly.
fn normalize_window(window: &[f64]) -> Vec<f64> {
    let lo = window.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.5; window.len()];
    }
    window.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Matches one sub-window against all templates. Returns the 13 DTW
/// distances (in template-id order) and the one-hot vector selecting the
/// argmin; ties break toward the lowest template id.
///
/// Both the window and each sampled template are min-max normalized before
/// the distance is taken, so only shape is compared and a window equal to a
/// sampled template is at distance zero regardless of the sampling grid.
pub fn match_subwindow(
    window: &[f64],
    templates: &TemplateSet,
) -> Result<(Vec<f64>, Vec<f64>), PatternError> {
    if window.len() < 2 {
        return Err(PatternError::WindowTooShort(window.len()));
    }
    let normalized = normalize_window(window);
    let mut distances = Vec::with_capacity(TEMPLATE_COUNT);
    for template in templates.templates() {
        let sampled = normalize_window(&sample_template(template, window.len())?);
        distances.push(dtw_distance(&normalized, &sampled)?);
    }
    let mut best = 0;
    for (i, &d) in distances.iter().enumerate() {
        if d < distances[best] {
            best = i;
        }
    }
    let mut one_hot = vec![0.0; TEMPLATE_COUNT];
    one_hot[best] = 1.0;
    Ok((distances, one_hot))
}

/// Builds the similarity feature block: for each window size (ascending),
/// the input is partitioned into contiguous sub-windows, each sub-window's
/// one-hot is broadcast across the steps it covers, and the 13-channel
/// blocks are stacked. Channel order is ascending window size, then
/// template id.
pub fn build_similarity_features(
    input: &[f64],
    plan: &SubWindowPlan,
    templates: &TemplateSet,
) -> Result<Vec<Vec<f64>>, PatternError> {
    let len = input.len();
    let mut sizes = plan.window_sizes.clone();
    sizes.sort_unstable();
    for &size in &sizes {
        if size == 0 || !len.is_multiple_of(size) {
            return Err(PatternError::IndivisibleWindowSize {
                size,
                input_len: len,
            });
        }
    }
    let mut channels = Vec::with_capacity(sizes.len() * TEMPLATE_COUNT);
    for &size in &sizes {
        let mut block = vec![vec![0.0; len]; TEMPLATE_COUNT];
        for (w, window) in input.chunks(size).enumerate() {
            let (_, one_hot) = match_subwindow(window, templates)?;
            let start = w * size;
            for (c, &flag) in one_hot.iter().enumerate() {
                if flag == 1.0 {
                    block[c][start..start + size].fill(1.0);
                }
            }
        }
        channels.extend(block);
    }
    Ok(channels)
}
