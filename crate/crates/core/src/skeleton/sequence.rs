use crate::error::{ensure, Error, Result};

/// Minimum number of frames a clip may carry.
pub const MIN_FRAMES: usize = 2;

/// A skeleton motion clip stored frame-major as `[frames × joints × channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionSequence {
    frames: usize,
    joints: usize,
    channels: usize,
    data: Vec<f32>,
    pub label: Option<u32>,
    pub subject: Option<u32>,
}

impl ActionSequence {
    pub fn new(frames: usize, joints: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            frames > 0 && joints > 0 && channels > 0,
            Argument,
            "empty sequence shape ({frames}, {joints}, {channels})"
        );
        ensure!(
            data.len() == frames * joints * channels,
            Argument,
            "data length {} does not match shape ({frames}, {joints}, {channels})",
            data.len()
        );
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("sequence value at flat index {i}")));
        }
        Ok(Self {
            frames,
            joints,
            channels,
            data,
            label: None,
            subject: None,
        })
    }

    pub fn zeros(frames: usize, joints: usize, channels: usize) -> Self {
        Self {
            frames,
            joints,
            channels,
            data: vec![0.0; frames * joints * channels],
            label: None,
            subject: None,
        }
    }

    pub fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }

    pub fn with_subject(mut self, subject: Option<u32>) -> Self {
        self.subject = subject;
        self
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.frames, self.joints, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn index(&self, t: usize, v: usize, c: usize) -> usize {
        (t * self.joints + v) * self.channels + c
    }

    #[inline]
    pub fn get(&self, t: usize, v: usize, c: usize) -> f32 {
        self.data[self.index(t, v, c)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, v: usize, c: usize, value: f32) {
        let i = self.index(t, v, c);
        self.data[i] = value;
    }

    /// Position of joint `v` at frame `t`; requires three channels.
    pub fn joint(&self, t: usize, v: usize) -> [f32; 3] {
        let i = self.index(t, v, 0);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major copy `[channels × frames × joints]`, the layout the networks consume.
    pub fn to_channel_major(&self) -> Vec<f32> {
        let (t_n, v_n, c_n) = self.shape();
        let mut out = vec![0.0; self.data.len()];
        for t in 0..t_n {
            for v in 0..v_n {
                for c in 0..c_n {
                    out[(c * t_n + t) * v_n + v] = self.get(t, v, c);
                }
            }
        }
        out
    }

    /// Inverse of [`ActionSequence::to_channel_major`].
    pub fn from_channel_major(
        channels: usize,
        frames: usize,
        joints: usize,
        values: &[f32],
    ) -> Result<Self> {
        ensure!(
            values.len() == channels * frames * joints,
            Argument,
            "channel-major buffer of {} values does not match ({channels}, {frames}, {joints})",
            values.len()
        );
        let mut data = vec![0.0; values.len()];
        for c in 0..channels {
            for t in 0..frames {
                for v in 0..joints {
                    data[(t * joints + v) * channels + c] = values[(c * frames + t) * joints + v];
                }
            }
        }
        Self::new(frames, joints, channels, data)
    }

    /// Mean Euclidean bone length over all frames for the given edge list.
    pub fn mean_bone_length(&self, edges: &[(usize, usize)]) -> f64 {
        if edges.is_empty() {
            return 0.0;
        }
        let mut total = 0.0f64;
        for t in 0..self.frames {
            for &(a, b) in edges {
                let mut sq = 0.0f64;
                for c in 0..self.channels {
                    let d = self.get(t, a, c) as f64 - self.get(t, b, c) as f64;
                    sq += d * d;
                }
                total += sq.sqrt();
            }
        }
        total / (self.frames * edges.len()) as f64
    }

    /// Applies `x ↦ (x - origin) * scale` to every joint of every frame.
    pub(crate) fn map_affine(&self, origin: &[f64], scale: f64) -> Self {
        let mut out = self.clone();
        for (i, x) in out.data.iter_mut().enumerate() {
            let c = i % self.channels;
            *x = ((*x as f64 - origin[c]) * scale) as f32;
        }
        out
    }
}
