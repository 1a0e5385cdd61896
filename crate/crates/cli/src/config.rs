//! Flat `section.key = value` run configuration.
//!
//! `#` starts a comment, blank lines are ignored, unknown keys and malformed
//! values are rejected with the offending line number. Keys not mentioned
//! keep their desk-scale defaults.

use std::fmt::Write as _;
use std::str::FromStr;

use dcan_core::augment::{AugmentSpec, RotationSpec};
use dcan_core::fusion::FusionParams;
use dcan_core::net::{DcanConfig, TrainSchedule};
use dcan_core::synth::GlandSceneSpec;
use dcan_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub net: DcanConfig,
    pub train: TrainSchedule,
    pub augment_enabled: bool,
    pub augment: AugmentSpec,
    pub contour_radius: usize,
    pub fusion: FusionParams,
    pub infer_stride: usize,
    pub synth: GlandSceneSpec,
    pub synth_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            net: DcanConfig::desk(),
            train: TrainSchedule::desk(),
            augment_enabled: false,
            augment: AugmentSpec::default(),
            contour_radius: 1,
            fusion: FusionParams::default(),
            infer_stride: 32,
            synth: GlandSceneSpec::default(),
            synth_count: 32,
        }
    }
}

type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;
type Getter = fn(&RunConfig) -> String;

struct Field {
    key: &'static str,
    doc: &'static str,
    set: Setter,
    get: Getter,
}

fn scalar<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?} as {}", std::any::type_name::<T>()))
}

fn list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|p| scalar(p.trim())).collect()
}

fn show_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn rotation(v: &str) -> std::result::Result<RotationSpec, String> {
    let mut parts = v.split_whitespace();
    match parts.next() {
        Some("range") => {
            let nums: Vec<f64> = parts.map(scalar).collect::<std::result::Result<_, _>>()?;
            match nums[..] {
                [lo, hi] => Ok(RotationSpec::Range(lo, hi)),
                _ => Err("`range` takes two angles".into()),
            }
        }
        Some("choices") => Ok(RotationSpec::Choices(parts.map(scalar).collect::<std::result::Result<_, _>>()?)),
        _ => Err(format!("rotation {v:?} must be `range LO HI` or `choices A B ...`")),
    }
}

fn show_rotation(r: &RotationSpec) -> String {
    match r {
        RotationSpec::Range(lo, hi) => format!("range {lo} {hi}"),
        RotationSpec::Choices(c) => {
            let parts: Vec<String> = c.iter().map(f64::to_string).collect();
            format!("choices {}", parts.join(" "))
        }
    }
}

macro_rules! field {
    ($key:literal, $doc:literal, $($path:ident).+) => {
        Field {
            key: $key,
            doc: $doc,
            set: |c, v| {
                c.$($path).+ = scalar(v)?;
                Ok(())
            },
            get: |c| c.$($path).+.to_string(),
        }
    };
    ($key:literal, $doc:literal, list $($path:ident).+) => {
        Field {
            key: $key,
            doc: $doc,
            set: |c, v| {
                c.$($path).+ = list(v)?;
                Ok(())
            },
            get: |c| show_list(&c.$($path).+),
        }
    };
}

const FIELDS: &[Field] = &[
    field!("run.seed", "Seed for every random choice of a command.", seed),
    field!("net.input_size", "Crop and tile size in pixels.", net.input_size),
    field!("net.in_channels", "Image channels (3 for RGB).", net.in_channels),
    field!("net.num_pool_stages", "Number of 2x2 max-pooling stages.", net.num_pool_stages),
    field!("net.channels_per_stage", "Conv channels of each stage, comma separated.", list net.channels_per_stage),
    field!("net.convs_per_stage", "3x3 convolutions before each pooling.", net.convs_per_stage),
    field!("net.branch_taps", "Stages whose features feed both branches.", list net.branch_taps),
    field!("net.head_channels", "Channels of the 1x1 reduction in each tap head.", net.head_channels),
    field!("net.dropout_rate", "Dropout in the tap heads during training.", net.dropout_rate),
    field!("net.weight_decay", "L2 penalty on weights (not biases).", net.weight_decay),
    field!("train.lr0", "Initial learning rate.", train.lr0),
    field!("train.lr_drop_factor", "Divisor applied when the loss plateaus.", train.lr_drop_factor),
    field!("train.lr_floor", "Smallest learning rate.", train.lr_floor),
    field!("train.lr_patience", "Window length (iterations) for the plateau test.", train.lr_patience),
    field!("train.lr_min_improvement", "Relative improvement a window must reach.", train.lr_min_improvement),
    field!("train.wa0", "Initial auxiliary-classifier weight.", train.wa0),
    field!("train.wa_drop_factor", "Divisor of the auxiliary weight per interval.", train.wa_drop_factor),
    field!("train.wa_interval", "Iterations between auxiliary-weight drops.", train.wa_interval),
    field!("train.wa_floor", "Smallest auxiliary weight.", train.wa_floor),
    field!("train.max_iters", "Training iterations.", train.max_iters),
    field!("train.augment", "Apply random warps to training crops.", augment_enabled),
    field!("augment.max_translation", "Largest shift in pixels along each axis.", augment.max_translation),
    Field {
        key: "augment.rotation",
        doc: "`range LO HI` or `choices A B ...`, in degrees.",
        set: |c, v| {
            c.augment.rotation = rotation(v)?;
            Ok(())
        },
        get: |c| show_rotation(&c.augment.rotation),
    },
    field!("augment.elastic_spacing", "Grid spacing of the elastic displacement field.", augment.elastic_spacing),
    field!("augment.elastic_sigma", "Displacement standard deviation in pixels.", augment.elastic_sigma),
    field!("augment.radial_k", "Radial distortion coefficients to choose from.", list augment.radial_k),
    field!("labels.contour_radius", "Disk radius used to thicken object boundaries.", contour_radius),
    field!("fusion.t_o", "Object probability threshold (inclusive).", fusion.t_o),
    field!("fusion.t_c", "Contour probability threshold (exclusive).", fusion.t_c),
    field!("fusion.smooth_radius", "Disk radius of the smoothing filter.", fusion.smooth_radius),
    field!("fusion.min_area", "Regions smaller than this are dropped.", fusion.min_area),
    field!("infer.stride", "Tile stride for overlap-tile inference.", infer_stride),
    field!("synth.count", "Scenes written by gen-data.", synth_count),
    field!("synth.width", "Scene width in pixels.", synth.width),
    field!("synth.height", "Scene height in pixels.", synth.height),
    field!("synth.min_glands", "Fewest glands per scene.", synth.min_glands),
    field!("synth.max_glands", "Most glands per scene.", synth.max_glands),
    field!("synth.min_radius", "Smallest gland semi-axis.", synth.min_radius),
    field!("synth.max_radius", "Largest gland semi-axis.", synth.max_radius),
    field!("synth.min_ring", "Thinnest epithelial band.", synth.min_ring),
    field!("synth.max_ring", "Thickest epithelial band.", synth.max_ring),
    field!("synth.lumen_intensity", "Lumen brightness in [0, 1].", synth.lumen_intensity),
    field!("synth.ring_intensity", "Epithelium brightness in [0, 1].", synth.ring_intensity),
    field!("synth.stroma_intensity", "Background brightness in [0, 1].", synth.stroma_intensity),
    field!("synth.noise_sigma", "Gaussian pixel noise.", synth.noise_sigma),
    field!("synth.touching_fraction", "Expected fraction of glands placed in touching pairs.", synth.touching_fraction),
    field!("synth.malignant_mode", "Irregular elongated glands without lumen.", synth.malignant_mode),
];

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::ConfigLine { line: i + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let field = FIELDS
                .iter()
                .find(|f| f.key == key)
                .ok_or_else(|| err(format!("unknown key {key:?}")))?;
            if !seen.insert(key) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            (field.set)(&mut config, value).map_err(|m| err(format!("{key}: {m}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        self.fusion.validate()?;
        self.synth.validate()?;
        if self.infer_stride == 0 || self.infer_stride > self.net.input_size {
            return Err(Error::Config(format!(
                "infer.stride = {} must be between 1 and net.input_size = {}",
                self.infer_stride, self.net.input_size
            )));
        }
        if self.synth_count == 0 {
            return Err(Error::Config("synth.count must be at least 1".into()));
        }
        Ok(())
    }

    /// Every key with its current value, in a form `parse` accepts.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in FIELDS {
            writeln!(s, "{} = {}", f.key, (f.get)(self)).expect("writing to a String");
        }
        s
    }
}

/// Markdown table of all keys, their defaults and meaning.
pub fn reference_page() -> String {
    let defaults = RunConfig::default();
    let mut s = String::from(
        "# Configuration keys\n\n\
         Config files hold one `section.key = value` per line; `#` starts a comment.\n\
         Lists are comma separated. Unlisted keys keep the defaults below.\n\n\
         | key | default | meaning |\n|---|---|---|\n",
    );
    for f in FIELDS {
        writeln!(s, "| `{}` | `{}` | {} |", f.key, (f.get)(&defaults), f.doc).expect("writing to a String");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn values_comments_and_whitespace() {
        let c = RunConfig::parse(
            "# demo\n\nnet.branch_taps = 1, 2,3\n  train.lr0=0.5 # trailing\naugment.rotation = choices 0 90 180 270\n",
        )
        .unwrap();
        assert_eq!(c.net.branch_taps, vec![1, 2, 3]);
        assert_eq!(c.train.lr0, 0.5);
        assert_eq!(c.augment.rotation, RotationSpec::Choices(vec![0.0, 90.0, 180.0, 270.0]));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let line_of = |text: &str| match RunConfig::parse(text) {
            Err(Error::ConfigLine { line, .. }) => line,
            other => panic!("expected a line error, got {other:?}"),
        };
        assert_eq!(line_of("run.seed = 1\nnet.bogus = 3\n"), 2);
        assert_eq!(line_of("\n\nnet.input_size = big\n"), 3);
        assert_eq!(line_of("run.seed 4\n"), 1);
        assert_eq!(line_of("run.seed = 1\nrun.seed = 2\n"), 2);
        assert!(matches!(RunConfig::parse("fusion.t_o = 1.5\n"), Err(Error::Param(_))));
    }
}
