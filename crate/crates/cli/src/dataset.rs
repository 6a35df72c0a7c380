//! Input shapes for fitting: procedural families or meshes on disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wfd_core::geometry::procedural::{Animation, Shape};
use wfd_core::geometry::{
    frame_time, grid_supervision, label_points, lattice_points, load_mesh, sample_supervision_3d,
    sample_supervision_4d, LabeledPointBatch, TriangleMesh,
};

use crate::config::{Mode, PipelineConfig};
use crate::Invalid;

type Range = [f32; 2];

/// A family of procedural shapes with uniformly drawn parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    Sphere {
        radius: Range,
        offset: f32,
    },
    Ellipsoid {
        axes: [Range; 3],
        offset: f32,
    },
    Box {
        size: [Range; 3],
        offset: f32,
    },
    Torus {
        major: Range,
        minor: Range,
    },
    TranslatingSphere {
        radius: Range,
        travel: Range,
    },
    ScalingSphere {
        start_radius: Range,
        end_radius: Range,
    },
    OscillatingEllipsoid {
        axes: [Range; 3],
        amplitude: Range,
    },
}

impl Family {
    pub fn is_animated(&self) -> bool {
        matches!(
            self,
            Family::TranslatingSphere { .. }
                | Family::ScalingSphere { .. }
                | Family::OscillatingEllipsoid { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Sphere { .. } => "sphere",
            Family::Ellipsoid { .. } => "ellipsoid",
            Family::Box { .. } => "box",
            Family::Torus { .. } => "torus",
            Family::TranslatingSphere { .. } => "translating_sphere",
            Family::ScalingSphere { .. } => "scaling_sphere",
            Family::OscillatingEllipsoid { .. } => "oscillating_ellipsoid",
        }
    }

    /// Default parameter ranges, chosen so every member fits in the unit cube.
    pub fn default_for(name: &str) -> Option<Self> {
        Some(match name {
            "sphere" => Family::Sphere {
                radius: [0.15, 0.35],
                offset: 0.05,
            },
            "ellipsoid" => Family::Ellipsoid {
                axes: [[0.15, 0.4], [0.1, 0.3], [0.1, 0.3]],
                offset: 0.0,
            },
            "box" => Family::Box {
                size: [[0.3, 0.7], [0.3, 0.7], [0.3, 0.7]],
                offset: 0.05,
            },
            "torus" => Family::Torus {
                major: [0.2, 0.3],
                minor: [0.06, 0.12],
            },
            "translating_sphere" => Family::TranslatingSphere {
                radius: [0.15, 0.25],
                travel: [0.1, 0.2],
            },
            "scaling_sphere" => Family::ScalingSphere {
                start_radius: [0.15, 0.25],
                end_radius: [0.25, 0.35],
            },
            "oscillating_ellipsoid" => Family::OscillatingEllipsoid {
                axes: [[0.2, 0.3], [0.15, 0.25], [0.15, 0.25]],
                amplitude: [0.1, 0.25],
            },
            _ => return None,
        })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Item {
        let mut u = |r: Range| {
            if r[0] < r[1] {
                rng.random_range(r[0]..=r[1])
            } else {
                r[0]
            }
        };
        match *self {
            Family::Sphere { radius, offset } => Item::Static(Shape::Sphere {
                center: [(); 3].map(|_| u([-offset, offset])),
                radius: u(radius),
            }),
            Family::Ellipsoid { axes, offset } => {
                let center = [(); 3].map(|_| u([-offset, offset]));
                Item::Static(Shape::Ellipsoid {
                    center,
                    axes: axes.map(&mut u),
                })
            }
            Family::Box { size, offset } => {
                let center = [(); 3].map(|_| u([-offset, offset]));
                Item::Static(Shape::Box {
                    center,
                    size: size.map(&mut u),
                })
            }
            Family::Torus { major, minor } => Item::Static(Shape::Torus {
                center: [0.0; 3],
                major: u(major),
                minor: u(minor),
            }),
            Family::TranslatingSphere { radius, travel } => {
                let (r, d) = (u(radius), u(travel));
                let angle = u([0.0, std::f32::consts::TAU]);
                let (s, c) = angle.sin_cos();
                let half = [0.5 * d * c, 0.5 * d * s, 0.0];
                Item::Animated(Animation::TranslatingSphere {
                    start: half.map(|v| -v),
                    end: half,
                    radius: r,
                })
            }
            Family::ScalingSphere {
                start_radius,
                end_radius,
            } => Item::Animated(Animation::ScalingSphere {
                center: [0.0; 3],
                start_radius: u(start_radius),
                end_radius: u(end_radius),
            }),
            Family::OscillatingEllipsoid { axes, amplitude } => {
                let axes = axes.map(&mut u);
                Item::Animated(Animation::OscillatingEllipsoid {
                    center: [0.0; 3],
                    axes,
                    amplitude: u(amplitude),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProceduralSpec {
    pub family: Family,
    pub count: usize,
    pub seed: u64,
}

impl Default for ProceduralSpec {
    fn default() -> Self {
        Self {
            family: Family::default_for("ellipsoid").expect("known family"),
            count: 8,
            seed: 0,
        }
    }
}

impl ProceduralSpec {
    /// The `count` members of the family, in order, with stable ids.
    pub fn items(&self) -> Vec<(String, Item)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.count)
            .map(|i| {
                (
                    format!("{}_{i:03}", self.family.name()),
                    self.family.draw(&mut rng),
                )
            })
            .collect()
    }
}

/// One shape to fit.
#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Static(Shape),
    Animated(Animation),
    Mesh(PathBuf),
}

impl Item {
    /// Ground-truth meshes: one for a static shape, one per frame otherwise.
    pub fn meshes(&self, frames: usize) -> Result<Vec<TriangleMesh>> {
        Ok(match self {
            Item::Static(shape) => vec![shape.mesh()],
            Item::Animated(anim) => anim.frames(frames).iter().map(Shape::mesh).collect(),
            Item::Mesh(path) => vec![load_mesh(path)?.normalize_to_unit_cube()?],
        })
    }

    /// Training points and a held-out labeled lattice for IoU.
    pub fn supervision(
        &self,
        config: &PipelineConfig,
        seed: u64,
    ) -> Result<(LabeledPointBatch, LabeledPointBatch)> {
        let s = &config.sampling;
        let res = s.eval_resolution;
        match (self, config.mode) {
            (Item::Static(shape), Mode::Static) => {
                let batch = sample_supervision_3d(
                    &shape.mesh(),
                    s.n_uniform,
                    s.n_near,
                    s.near_sigma,
                    seed,
                )?;
                Ok((batch, grid_supervision(res, None, |p| shape.contains(p))))
            }
            (Item::Mesh(_), Mode::Static) => {
                let mesh = &self.meshes(1)?[0];
                let batch = sample_supervision_3d(mesh, s.n_uniform, s.n_near, s.near_sigma, seed)?;
                let lattice = lattice_points(res);
                let labels = label_points(mesh, &lattice);
                let eval =
                    LabeledPointBatch::new(3, lattice.into_iter().flatten().collect(), labels)?;
                Ok((batch, eval))
            }
            (Item::Animated(anim), Mode::Animated) => {
                let shapes = anim.frames(s.frames);
                let meshes: Vec<TriangleMesh> = shapes.iter().map(Shape::mesh).collect();
                let batch = sample_supervision_4d(&meshes, s.n_per_frame, s.near_sigma, seed)?;
                let evals = shapes
                    .iter()
                    .enumerate()
                    .map(|(i, shape)| {
                        grid_supervision(res, Some(frame_time(i, s.frames)), |p| shape.contains(p))
                    })
                    .collect();
                Ok((batch, LabeledPointBatch::concat(evals)?))
            }
            (_, mode) => Err(Invalid(format!("input does not match mode {mode:?}")).into()),
        }
    }
}

/// Every `.obj`/`.off` file in `dir`, sorted by name.
pub fn mesh_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Invalid(format!("{}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("obj") || e.eq_ignore_ascii_case("off"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// The configured inputs as `(id, item)` pairs.
pub fn inputs(config: &PipelineConfig) -> Result<Vec<(String, Item)>> {
    let mut items = Vec::new();
    if let Some(dir) = &config.dataset.mesh_dir {
        if config.mode == Mode::Animated {
            return Err(Invalid("mesh directories are supported in 3d mode only".into()).into());
        }
        for path in mesh_files(dir)? {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("mesh")
                .to_owned();
            items.push((id, Item::Mesh(path)));
        }
    }
    if let Some(spec) = &config.dataset.procedural {
        items.extend(spec.items());
    }
    if items.is_empty() {
        return Err(Invalid("no inputs".into()).into());
    }
    Ok(items)
}
