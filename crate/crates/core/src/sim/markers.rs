use rand::Rng;

use super::{contact_state, integrate_script, stream_rng, MotionScript, SceneConfig};
use crate::grid::Grid;
use crate::Result;

const DOT_SIGMA: f64 = 1.1;
const CELL: f64 = 6.0;

/// Undeformed reference image and the warped image of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub reference: Grid<u8>,
    pub current: Grid<u8>,
    pub timestamp: f64,
    pub sensor_id: u8,
}

/// Random Gaussian-dot pattern evaluated at continuous positions.
struct DotPattern {
    cols: usize,
    rows: usize,
    bins: Vec<Vec<[f64; 2]>>,
}

impl DotPattern {
    fn new(width: usize, height: usize, seed: u64, sensor: usize) -> Self {
        let mut rng = stream_rng(seed, sensor, 0, 1);
        let cols = (width as f64 / CELL).ceil() as usize + 2;
        let rows = (height as f64 / CELL).ceil() as usize + 2;
        let mut bins = vec![Vec::new(); cols * rows];
        let count = width * height / 14;
        for _ in 0..count {
            let x = rng.random::<f64>() * (cols as f64 * CELL) - CELL;
            let y = rng.random::<f64>() * (rows as f64 * CELL) - CELL;
            let (c, r) = (((x + CELL) / CELL) as usize, ((y + CELL) / CELL) as usize);
            bins[r.min(rows - 1) * cols + c.min(cols - 1)].push([x, y]);
        }
        Self { cols, rows, bins }
    }

    fn intensity(&self, x: f64, y: f64) -> f64 {
        let c = ((x + CELL) / CELL).floor() as isize;
        let r = ((y + CELL) / CELL).floor() as isize;
        let mut acc = 0.0;
        for rr in r - 1..=r + 1 {
            for cc in c - 1..=c + 1 {
                if rr < 0 || cc < 0 || rr as usize >= self.rows || cc as usize >= self.cols {
                    continue;
                }
                for d in &self.bins[rr as usize * self.cols + cc as usize] {
                    let (dx, dy) = (x - d[0], y - d[1]);
                    acc += (-(dx * dx + dy * dy) / (2.0 * DOT_SIGMA * DOT_SIGMA)).exp();
                }
            }
        }
        30.0 + 200.0 * acc.min(1.0)
    }

    fn render(&self, width: usize, height: usize, warp: impl Fn(usize, usize) -> [f64; 2]) -> Grid<u8> {
        Grid::from_fn(width, height, |i, j| {
            let u = warp(i, j);
            self.intensity(i as f64 - u[0], j as f64 - u[1]).round().clamp(0.0, 255.0) as u8
        })
    }
}

/// Marker images for every frame and sensor, frame-major. The current image
/// is the reference pattern warped backwards by the in-plane displacement
/// `image_gain · (fˣ, fʸ) − image_expansion · ∇pen` of the noise-free
/// contact state, so that `cur(s + u) ≈ ref(s)`.
///
/// Returns the pairs and the frame at which contact was lost, if any.
pub fn render_marker_images(
    scene: &SceneConfig,
    script: &MotionScript,
    seed: u64,
) -> Result<(Vec<ImagePair>, Option<usize>)> {
    scene.validate()?;
    let (times, poses, twists) = integrate_script(&scene.initial_pose(), script)?;
    let (w, h) = (scene.width, scene.height);
    let sensors = scene.sensor_count();
    let patterns: Vec<DotPattern> = (0..sensors).map(|s| DotPattern::new(w, h, seed, s)).collect();
    let references: Vec<Grid<u8>> = patterns.iter().map(|p| p.render(w, h, |_, _| [0.0; 2])).collect();
    let mut pairs = Vec::new();
    for k in 0..times.len() {
        let mut frame_pairs = Vec::with_capacity(sensors);
        for (s, pattern) in patterns.iter().enumerate() {
            let pose = scene.pose_in_sensor(&poses[k], s);
            let st = contact_state(scene, &pose, &twists[k]);
            if st.contact_pixels == 0 || st.touches_border {
                return Ok((pairs, Some(k)));
            }
            let pen = &st.penetration;
            let slope = |i: usize, j: usize| {
                let (il, ir) = (i.saturating_sub(1), (i + 1).min(w - 1));
                let (jl, jr) = (j.saturating_sub(1), (j + 1).min(h - 1));
                [
                    (pen.get(ir, j) - pen.get(il, j)) / (ir - il) as f64,
                    (pen.get(i, jr) - pen.get(i, jl)) / (jr - jl) as f64,
                ]
            };
            let current = pattern.render(w, h, |i, j| {
                let f = st.field.get(i, j);
                let g = slope(i, j);
                [
                    scene.image_gain * f[0] - scene.image_expansion * g[0],
                    scene.image_gain * f[1] - scene.image_expansion * g[1],
                ]
            });
            frame_pairs.push(ImagePair {
                reference: references[s].clone(),
                current,
                timestamp: times[k],
                sensor_id: s as u8,
            });
        }
        pairs.extend(frame_pairs);
    }
    Ok((pairs, None))
}
