use crate::error::{Error, Result};

/// Architecture and regularization settings of the network.
///
/// Stage `k` (1-based) runs `convs_per_stage` 3x3 convolutions followed by a
/// 2x2 max-pool, so its output sits at `input_size / 2^k`. Each stage listed in
/// `branch_taps` feeds one prediction head per branch; heads upsample back to
/// full resolution with a single stride-`2^k` transposed convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DcanConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub num_pool_stages: usize,
    pub channels_per_stage: Vec<usize>,
    pub convs_per_stage: usize,
    pub branch_taps: Vec<usize>,
    /// Width of the 1x1 reduction and transposed convolution in each head.
    pub head_channels: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
}

impl Default for DcanConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DcanConfig {
    /// CPU-sized default: three pooling stages, taps on the two deepest.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            in_channels: 3,
            num_pool_stages: 3,
            channels_per_stage: vec![16, 32, 64],
            convs_per_stage: 2,
            branch_taps: vec![2, 3],
            head_channels: 16,
            dropout_rate: 0.0,
            weight_decay: 5e-4,
        }
    }

    /// Tiny network used for gradient verification.
    pub fn miniature() -> Self {
        Self {
            input_size: 16,
            in_channels: 3,
            num_pool_stages: 2,
            channels_per_stage: vec![4, 4],
            convs_per_stage: 2,
            branch_taps: vec![1, 2],
            head_channels: 4,
            dropout_rate: 0.5,
            weight_decay: 5e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.num_pool_stages == 0 {
            return fail("num_pool_stages must be at least 1".into());
        }
        if self.channels_per_stage.len() != self.num_pool_stages {
            return fail(format!(
                "channels_per_stage has {} entries for {} stages",
                self.channels_per_stage.len(),
                self.num_pool_stages
            ));
        }
        if self.channels_per_stage.iter().any(|&c| c == 0)
            || self.in_channels == 0
            || self.head_channels == 0
        {
            return fail("channel counts must be positive".into());
        }
        if self.convs_per_stage == 0 {
            return fail("convs_per_stage must be at least 1".into());
        }
        if self.branch_taps.is_empty() {
            return fail("branch_taps must name at least one stage".into());
        }
        let mut seen = self.branch_taps.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.branch_taps.len() {
            return fail("branch_taps contains duplicates".into());
        }
        for &t in &self.branch_taps {
            if t == 0 || t > self.num_pool_stages {
                return fail(format!(
                    "tap stage {t} outside 1..={}",
                    self.num_pool_stages
                ));
            }
        }
        let factor = 1usize << self.num_pool_stages;
        if self.input_size == 0 || self.input_size % factor != 0 {
            return fail(format!(
                "input_size {} must be a positive multiple of 2^{} = {}",
                self.input_size, self.num_pool_stages, factor
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!("weight_decay {} must be >= 0", self.weight_decay));
        }
        Ok(())
    }

    /// Names of the auxiliary classifiers in order, one per tap per branch.
    pub fn aux_classifiers(&self) -> Vec<String> {
        let mut names = Vec::new();
        for branch in ["object", "contour"] {
            for (i, t) in self.branch_taps.iter().enumerate() {
                names.push(format!("{branch}.C{} (stage {t})", i + 1));
            }
        }
        names
    }
}

/// Learning-rate and auxiliary discount-weight schedules.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub lr0: f64,
    pub lr_drop_factor: f64,
    pub lr_floor: f64,
    /// Window length (iterations) over which the smoothed loss is compared.
    pub lr_patience: usize,
    /// Relative improvement the window mean must achieve to keep the rate.
    pub lr_min_improvement: f64,
    pub wa0: f64,
    pub wa_drop_factor: f64,
    pub wa_interval: usize,
    pub wa_floor: f64,
    pub max_iters: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            lr_drop_factor: 10.0,
            lr_floor: 1e-7,
            lr_patience: 200,
            lr_min_improvement: 1e-3,
            wa0: 1.0,
            wa_drop_factor: 10.0,
            wa_interval: 10_000,
            wa_floor: 1e-3,
            max_iters: 2000,
        }
    }
}

impl TrainSchedule {
    /// Schedule for the desk network on 64x64 crops: the loss sums over
    /// pixels, so the initial rate is far below the default, and the
    /// auxiliary weight decays within the shorter run.
    pub fn desk() -> Self {
        Self {
            lr0: 3e-5,
            wa_interval: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return fail("lr0 must be finite and >= 0");
        }
        if self.lr_drop_factor < 1.0 || self.wa_drop_factor < 1.0 {
            return fail("drop factors must be >= 1");
        }
        if self.lr_floor < 0.0 || self.wa_floor < 0.0 || self.wa0 < 0.0 {
            return fail("floors and wa0 must be >= 0");
        }
        if self.lr_patience == 0 || self.wa_interval == 0 {
            return fail("lr_patience and wa_interval must be positive");
        }
        Ok(())
    }

    /// Discount weight of the auxiliary classifiers at iteration `t`:
    /// divided by `wa_drop_factor` every `wa_interval` iterations, never below
    /// `wa_floor`.
    pub fn wa_at(&self, t: usize) -> f64 {
        let drops = (t / self.wa_interval) as i32;
        let w = self.wa0 / self.wa_drop_factor.powi(drops);
        if w < self.wa_floor {
            self.wa_floor.min(self.wa0)
        } else {
            w
        }
    }
}

/// Tracks the plateau-triggered learning-rate drops during training.
#[derive(Clone, Debug)]
pub struct LrController {
    lr: f64,
    window_sum: f64,
    window_len: usize,
    previous_mean: Option<f64>,
}

impl LrController {
    pub fn new(schedule: &TrainSchedule) -> Self {
        Self {
            lr: schedule.lr0,
            window_sum: 0.0,
            window_len: 0,
            previous_mean: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one iteration's loss. At the end of each window the window
    /// mean is compared with the previous one; failing to improve by the
    /// configured fraction divides the rate (bounded below by the floor).
    pub fn observe(&mut self, loss: f64, schedule: &TrainSchedule) {
        self.window_sum += loss;
        self.window_len += 1;
        if self.window_len < schedule.lr_patience {
            return;
        }
        let mean = self.window_sum / self.window_len as f64;
        if let Some(prev) = self.previous_mean {
            if mean > prev * (1.0 - schedule.lr_min_improvement) {
                let dropped = self.lr / schedule.lr_drop_factor;
                self.lr = dropped.max(schedule.lr_floor).min(self.lr);
            }
        }
        self.previous_mean = Some(mean);
        self.window_sum = 0.0;
        self.window_len = 0;
    }
}
