//! Bundled scene-suite builders.
//!
//! Every builder lays objects out in parallel lanes (fixed y offsets, one
//! object per lane) so cuboids can never collide, keeps near objects away
//! from the camera's horizontal field-of-view edge, and draws appearance
//! classes independently of mobility, so a parked object can look exactly
//! like a moving one. All sampled quantities land on the dyadic grid the
//! generator requires.

use super::{
    generate, Appearance, BackgroundSpec, CameraSpec, Mobility, ObjectSpec, SceneDataset,
    SceneSpec, SensorSpec, SimError, Trajectory,
};
use crate::rng::{rng_for, Stream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteSpec {
    pub name: String,
    pub scenes: Vec<SceneSpec>,
}

pub fn generate_suite(suite: &SuiteSpec) -> Result<Vec<SceneDataset>, SimError> {
    suite.scenes.iter().map(generate).collect()
}

/// Appearance classes shared by movers and parked objects.
const CLASSES: [([f64; 3], f64); 4] = [
    ([0.78, 0.22, 0.20], 0.03),
    ([0.20, 0.32, 0.78], 0.03),
    ([0.80, 0.70, 0.25], 0.03),
    ([0.30, 0.62, 0.32], 0.03),
];

const LANES: [f64; 6] = [-7.5, -4.5, -1.5, 1.5, 4.5, 7.5];

fn default_background() -> BackgroundSpec {
    BackgroundSpec {
        x_range: [2.0, 45.0],
        y_range: [-14.0, 14.0],
        density: 1.2,
        base_color: [0.45, 0.45, 0.43],
        image_noise: 0.02,
    }
}

/// Quantizes to quarter meters (coarse but still dyadic).
fn q4(x: f64) -> f64 {
    (x * 4.0).round() / 4.0
}

fn sample_size(rng: &mut impl Rng) -> [f64; 3] {
    [
        q4(rng.gen_range(2.4..4.4)),
        q4(rng.gen_range(1.5..2.25)),
        q4(rng.gen_range(1.5..2.25)),
    ]
}

/// Keeps near objects inside the camera's horizontal field of view.
fn min_visible_x(lane: f64) -> f64 {
    lane.abs() * 1.6 + 4.0
}

const SPEEDS: [f64; 4] = [0.1875, 0.25, 0.3125, 0.375];

struct LaneFill {
    mobility: Mobility,
    class: usize,
    size: [f64; 3],
}

/// Places one object per lane; movers run along their lane in x.
fn build_scene(
    name: String,
    seed: u64,
    scene_index: u64,
    frames: u32,
    fills: Vec<LaneFill>,
    sensor: SensorSpec,
    background: BackgroundSpec,
) -> SceneSpec {
    let mut rng = rng_for(seed, Stream::SceneLayout, scene_index);
    let mut lanes = LANES.to_vec();
    lanes.shuffle(&mut rng);
    let mut objects = Vec::new();
    for (i, fill) in fills.into_iter().enumerate() {
        let lane = lanes[i % lanes.len()];
        let (base_color, texture_noise) = CLASSES[fill.class];
        let trajectory = match fill.mobility {
            Mobility::Static => {
                let x = q4(rng.gen_range(min_visible_x(lane).max(9.0)..28.0));
                Trajectory::Fixed { position: [x, lane, fill.size[2] / 2.0] }
            }
            Mobility::Moving => {
                let speed = *SPEEDS.choose(&mut rng).expect("non-empty");
                let forward = rng.gen_bool(0.5);
                let lo = min_visible_x(lane).max(7.0);
                let x0 = if forward {
                    q4(rng.gen_range(lo..(lo + 5.0).max(13.0)))
                } else {
                    q4(rng.gen_range((lo + 8.0).max(20.0)..27.0))
                };
                Trajectory::Linear {
                    start: [x0, lane, fill.size[2] / 2.0],
                    velocity: [if forward { speed } else { -speed }, 0.0, 0.0],
                }
            }
        };
        objects.push(ObjectSpec {
            id: (i + 1) as u32,
            size: fill.size,
            mobility: fill.mobility,
            trajectory,
            appearance: Appearance { base_color, texture_noise },
        });
    }
    SceneSpec {
        name,
        frames,
        seed: seed.wrapping_add(scene_index),
        ego: Trajectory::Linear { start: [0.0, 0.0, 0.0], velocity: [0.25, 0.0, 0.0] },
        objects,
        background,
        sensor,
        camera: CameraSpec::default(),
    }
}

/// Ten scenes, twenty frames each; movers outnumber parked objects.
pub fn standard_suite(seed: u64) -> SuiteSpec {
    let mut scenes = Vec::new();
    for s in 0..10u64 {
        let mut rng = rng_for(seed, Stream::SceneLayout, 1000 + s);
        let n_movers = rng.gen_range(3..=4);
        let n_static = rng.gen_range(1..=2);
        let mut fills: Vec<LaneFill> = (0..n_movers)
            .map(|_| LaneFill {
                mobility: Mobility::Moving,
                class: rng.gen_range(0..CLASSES.len()),
                size: sample_size(&mut rng),
            })
            .collect();
        for _ in 0..n_static {
            fills.push(LaneFill {
                mobility: Mobility::Static,
                class: rng.gen_range(0..CLASSES.len()),
                size: sample_size(&mut rng),
            });
        }
        fills.shuffle(&mut rng);
        scenes.push(build_scene(
            format!("standard_{s:03}"),
            seed,
            s,
            20,
            fills,
            SensorSpec::default(),
            default_background(),
        ));
    }
    SuiteSpec { name: "standard".into(), scenes }
}

/// Six scenes dominated by parked objects, each of which shares size and
/// appearance with some mover in the same scene ("twins"). Motion cues
/// alone cannot label them; only appearance transfer can.
pub fn static_heavy_suite(seed: u64) -> SuiteSpec {
    let mut scenes = Vec::new();
    for s in 0..6u64 {
        let mut rng = rng_for(seed, Stream::SceneLayout, 2000 + s);
        let mut fills = Vec::new();
        for _ in 0..2 {
            let class = rng.gen_range(0..CLASSES.len());
            let size = sample_size(&mut rng);
            fills.push(LaneFill { mobility: Mobility::Moving, class, size });
            // Twin: identical body, parked.
            fills.push(LaneFill { mobility: Mobility::Static, class, size });
        }
        for _ in 0..2 {
            fills.push(LaneFill {
                mobility: Mobility::Static,
                class: rng.gen_range(0..CLASSES.len()),
                size: sample_size(&mut rng),
            });
        }
        fills.shuffle(&mut rng);
        scenes.push(build_scene(
            format!("static_heavy_{s:03}"),
            seed,
            100 + s,
            20,
            fills,
            SensorSpec::default(),
            default_background(),
        ));
    }
    SuiteSpec { name: "static_heavy".into(), scenes }
}

/// Standard layout with sensor position noise, sample dropout and heavier
/// image noise.
pub fn noisy_suite(seed: u64) -> SuiteSpec {
    let mut scenes = Vec::new();
    for s in 0..6u64 {
        let mut rng = rng_for(seed, Stream::SceneLayout, 3000 + s);
        let n_movers = rng.gen_range(3..=4);
        let mut fills: Vec<LaneFill> = (0..n_movers)
            .map(|_| LaneFill {
                mobility: Mobility::Moving,
                class: rng.gen_range(0..CLASSES.len()),
                size: sample_size(&mut rng),
            })
            .collect();
        fills.push(LaneFill {
            mobility: Mobility::Static,
            class: rng.gen_range(0..CLASSES.len()),
            size: sample_size(&mut rng),
        });
        fills.shuffle(&mut rng);
        let mut background = default_background();
        background.image_noise = 0.05;
        scenes.push(build_scene(
            format!("noisy_{s:03}"),
            seed,
            200 + s,
            16,
            fills,
            SensorSpec { noise_sigma: 0.03125, dropout: 0.08, ..SensorSpec::default() },
            background,
        ));
    }
    SuiteSpec { name: "noisy".into(), scenes }
}

/// Three short scenes; used by fast end-to-end and determinism checks.
pub fn small_suite(seed: u64) -> SuiteSpec {
    let mut scenes = Vec::new();
    for s in 0..3u64 {
        let mut rng = rng_for(seed, Stream::SceneLayout, 4000 + s);
        let mut fills: Vec<LaneFill> = (0..2)
            .map(|_| LaneFill {
                mobility: Mobility::Moving,
                class: rng.gen_range(0..CLASSES.len()),
                size: sample_size(&mut rng),
            })
            .collect();
        fills.push(LaneFill {
            mobility: Mobility::Static,
            class: rng.gen_range(0..CLASSES.len()),
            size: sample_size(&mut rng),
        });
        fills.shuffle(&mut rng);
        scenes.push(build_scene(
            format!("small_{s:03}"),
            seed,
            300 + s,
            12,
            fills,
            SensorSpec::default(),
            default_background(),
        ));
    }
    SuiteSpec { name: "small".into(), scenes }
}

pub fn suite_by_name(name: &str, seed: u64) -> Option<SuiteSpec> {
    match name {
        "standard" => Some(standard_suite(seed)),
        "static_heavy" => Some(static_heavy_suite(seed)),
        "noisy" => Some(noisy_suite(seed)),
        "small" => Some(small_suite(seed)),
        _ => None,
    }
}
