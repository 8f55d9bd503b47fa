//! Reader for the NTU RGB+D `.skeleton` text layout.
//!
//! ```text
//! <frame count>
//! per frame:  <body count>
//!   per body: <body id> + 9 tracking fields
//!             <joint count>
//!             per joint: x y z depthX depthY colorX colorY qw qx qy qz state
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::graph::ntu::JOINTS;
use super::sequence::ActionSequence;

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        loop {
            match self.inner.next() {
                Some((i, l)) if l.trim().is_empty() => self.last = i + 1,
                Some((i, l)) => {
                    self.last = i + 1;
                    return Ok((i + 1, l));
                }
                None => {
                    return Err(Error::Parse {
                        line: self.last + 1,
                        msg: format!("unexpected end of file, expected {what}"),
                    })
                }
            }
        }
    }

    fn next_count(&mut self, what: &str) -> Result<(usize, usize)> {
        let (n, l) = self.next_line(what)?;
        let v = l.trim().parse::<usize>().map_err(|e| Error::Parse {
            line: n,
            msg: format!("bad {what} {:?}: {e}", l.trim()),
        })?;
        Ok((n, v))
    }
}

/// Parses `.skeleton` text; one clip per tracked body id, in order of first appearance.
pub fn parse_ntu_skeleton(text: &str) -> Result<Vec<ActionSequence>> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let (_, frame_count) = lines.next_count("frame count")?;
    let mut bodies: Vec<(String, Vec<f32>, usize)> = Vec::new();

    for _ in 0..frame_count {
        let (_, body_count) = lines.next_count("body count")?;
        for _ in 0..body_count {
            let (n, info) = lines.next_line("body info")?;
            let id = info
                .split_whitespace()
                .next()
                .ok_or_else(|| Error::Parse {
                    line: n,
                    msg: "empty body info".into(),
                })?
                .to_string();
            let (n, joints) = lines.next_count("joint count")?;
            if joints != JOINTS {
                return Err(Error::UnsupportedLayout(format!(
                    "line {n}: {joints} joints per body, only {JOINTS} supported"
                )));
            }
            let slot = match bodies.iter().position(|b| b.0 == id) {
                Some(i) => i,
                None => {
                    bodies.push((id, Vec::new(), 0));
                    bodies.len() - 1
                }
            };
            for _ in 0..joints {
                let (n, l) = lines.next_line("joint")?;
                let mut it = l.split_whitespace();
                for _ in 0..3 {
                    let tok = it.next().ok_or_else(|| Error::Parse {
                        line: n,
                        msg: "joint line has fewer than 3 fields".into(),
                    })?;
                    let x = tok.parse::<f32>().map_err(|e| Error::Parse {
                        line: n,
                        msg: format!("bad coordinate {tok:?}: {e}"),
                    })?;
                    bodies[slot].1.push(x);
                }
            }
            bodies[slot].2 += 1;
        }
    }

    bodies
        .into_iter()
        .map(|(_, data, frames)| ActionSequence::new(frames, JOINTS, 3, data))
        .collect()
}

/// Loads an NTU `.skeleton` file. Frames without bodies are dropped.
pub fn load_ntu_skeleton(path: impl AsRef<Path>) -> Result<Vec<ActionSequence>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ntu_skeleton(&text)
}
