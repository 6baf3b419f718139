//! Counter-based random streams.
//!
//! Every draw is keyed by `(seed, image index, stage, attempt)`: each key owns
//! an independent ChaCha stream, so parameters for one image never depend on
//! how many images were processed before it or on the batch split.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// One stochastic step of the pipeline, in the fixed execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    XFlip,
    Rotate90,
    IntTranslate,
    IsoScale,
    PreRotate,
    AnisoScale,
    PostRotate,
    FracTranslate,
    Brightness,
    Contrast,
    LumaFlip,
    Hue,
    Saturation,
    Band0,
    Band1,
    Band2,
    Band3,
    Noise,
    Cutout,
    NoiseField,
}

impl Stage {
    pub const COUNT: usize = 20;

    pub const BANDS: [Stage; 4] = [Stage::Band0, Stage::Band1, Stage::Band2, Stage::Band3];

    fn index(self) -> usize {
        self as usize
    }
}

/// Source of the uniform and normal variates consumed by the samplers.
///
/// Within a stage the gate is always drawn first, so replacing the gate in a
/// test double does not shift the value draws of that stage or any other.
pub trait ParamRng {
    /// Uniform on `[0, 1)`.
    fn uniform(&mut self, stage: Stage) -> f64;

    /// Standard normal.
    fn normal(&mut self, stage: Stage) -> f64;

    fn gate(&mut self, stage: Stage, prob: f64) -> bool {
        self.uniform(stage) < prob
    }
}

/// The production [`ParamRng`]: one lazily created ChaCha stream per stage.
pub struct CounterRng {
    key: [u8; 32],
    attempt: u64,
    streams: [Option<ChaCha8Rng>; Stage::COUNT],
}

impl CounterRng {
    pub fn new(seed: u64, image_index: u64) -> Self {
        Self::with_attempt(seed, image_index, 0)
    }

    /// Streams for a re-draw; `attempt = 0` is the primary draw.
    pub fn with_attempt(seed: u64, image_index: u64, attempt: u64) -> Self {
        CounterRng {
            key: stream_key(seed, image_index),
            attempt,
            streams: Default::default(),
        }
    }

    fn stream(&mut self, stage: Stage) -> &mut ChaCha8Rng {
        let key = self.key;
        let id = self.attempt * Stage::COUNT as u64 + stage.index() as u64;
        self.streams[stage.index()].get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::from_seed(key);
            rng.set_stream(id);
            rng
        })
    }
}

impl ParamRng for CounterRng {
    fn uniform(&mut self, stage: Stage) -> f64 {
        self.stream(stage).random::<f64>()
    }

    fn normal(&mut self, stage: Stage) -> f64 {
        self.stream(stage).sample(StandardNormal)
    }
}

/// Per-pixel noise stream for one image.
pub fn noise_field_rng(seed: u64, image_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::from_seed(stream_key(seed, image_index));
    rng.set_stream(Stage::NoiseField.index() as u64);
    rng
}

fn stream_key(seed: u64, image_index: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&image_index.to_le_bytes());
    key
}
