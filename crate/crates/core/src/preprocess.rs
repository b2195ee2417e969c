//! Dataset admission filters and rotation/scale augmentation.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Mat3};
use crate::mesh::{clean_mesh, load_mesh, normalize_mesh, save_mesh, Mesh, DEFAULT_MERGE_EPSILON};
use crate::par::{self, ExecPolicy};
use crate::{Error, Result};

pub const MIN_FACES: usize = 500;
pub const MAX_FACES: usize = 32000;
/// Meshes whose vertex/face ratio is strictly above this are rejected.
pub const MAX_POINT_FACE_RATIO: f64 = 0.8;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    None,
    TooFewFaces,
    TooManyFaces,
    OpenBoundaryRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub face_count: usize,
    pub point_face_ratio: f64,
    pub accepted: bool,
    pub rejection_reason: RejectionReason,
}

pub fn check_face_count(mesh: &Mesh, lo: usize, hi: usize) -> bool {
    (lo..=hi).contains(&mesh.face_count())
}

pub fn point_face_ratio(mesh: &Mesh) -> Result<f64> {
    if mesh.faces.is_empty() {
        return Err(Error::EmptyMesh);
    }
    Ok(mesh.vertex_count() as f64 / mesh.face_count() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterParams {
    pub min_faces: usize,
    pub max_faces: usize,
    pub max_ratio: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        FilterParams {
            min_faces: MIN_FACES,
            max_faces: MAX_FACES,
            max_ratio: MAX_POINT_FACE_RATIO,
        }
    }
}

/// Face-count band first, then the strict ratio test.
pub fn filter_mesh(mesh: &Mesh, params: &FilterParams) -> FilterReport {
    let face_count = mesh.face_count();
    let ratio = point_face_ratio(mesh).unwrap_or(f64::INFINITY);
    let reason = if face_count < params.min_faces {
        RejectionReason::TooFewFaces
    } else if face_count > params.max_faces {
        RejectionReason::TooManyFaces
    } else if ratio > params.max_ratio {
        RejectionReason::OpenBoundaryRatio
    } else {
        RejectionReason::None
    };
    FilterReport {
        face_count,
        point_face_ratio: ratio,
        accepted: reason == RejectionReason::None,
        rejection_reason: reason,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Euler angles `(alpha, beta, gamma)` about x, y, z.
    pub angles: [f64; 3],
    pub scale: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            angles: [0.0; 3],
            scale: 1.0,
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = std::f64::consts::TAU;
        let angles = [rng.gen_range(0.0..tau), rng.gen_range(0.0..tau), rng.gen_range(0.0..tau)];
        let scale = rng.gen_range(SCALE_RANGE.0..=SCALE_RANGE.1);
        AugmentParams { angles, scale }
    }

    /// `R_z(gamma) R_y(beta) R_x(alpha)`.
    pub fn rotation(&self) -> Mat3 {
        let [a, b, g] = self.angles;
        geom::mat_mul(&geom::rot_z(g), &geom::mat_mul(&geom::rot_y(b), &geom::rot_x(a)))
    }
}

pub fn augment_mesh(mesh: &Mesh, seed: u64) -> Mesh {
    augment_with(mesh, &AugmentParams::from_seed(seed))
}

/// Rotates then scales about the bounding-box centre.
pub fn augment_with(mesh: &Mesh, params: &AugmentParams) -> Mesh {
    if mesh.vertices.is_empty() {
        return mesh.clone();
    }
    let c = mesh.bbox().center();
    let r = params.rotation();
    mesh.transformed(|p| geom::add(c, geom::scale(geom::mat_apply(&r, geom::sub(p, c)), params.scale)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessOptions {
    pub filter: FilterParams,
    pub merge_epsilon: f64,
    pub augment: bool,
    pub seed: u64,
    pub policy: ExecPolicy,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            filter: FilterParams::default(),
            merge_epsilon: DEFAULT_MERGE_EPSILON,
            augment: false,
            seed: 0,
            policy: ExecPolicy::default(),
        }
    }
}

/// Normalize, clean, filter, and (if accepted and enabled) augment.
pub fn preprocess_mesh(mesh: &Mesh, opts: &PreprocessOptions, seed: u64) -> Result<(Option<Mesh>, FilterReport)> {
    let (norm, _) = normalize_mesh(mesh)?;
    let cleaned = clean_mesh(&norm, opts.merge_epsilon);
    let report = filter_mesh(&cleaned, &opts.filter);
    if !report.accepted {
        return Ok((None, report));
    }
    let out = if opts.augment { augment_mesh(&cleaned, seed) } else { cleaned };
    Ok((Some(out), report))
}

/// One line of the batch manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub face_count: usize,
    pub ratio: f64,
    pub accepted: bool,
    pub rejection_reason: RejectionReason,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn obj_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj")))
        .collect();
    v.sort();
    Ok(v)
}

/// Processes every `.obj` in `input` (sorted by name), writing accepted
/// meshes and `manifest.jsonl` into `output`. The i-th file uses seed
/// `opts.seed + i`. Files that fail to parse are listed with an error and
/// count as rejected.
pub fn preprocess_dir(input: &Path, output: &Path, opts: &PreprocessOptions) -> Result<Vec<ManifestEntry>> {
    let files = obj_files(input)?;
    std::fs::create_dir_all(output)?;
    let indexed: Vec<(usize, PathBuf)> = files.into_iter().enumerate().collect();
    let entries = par::map_slice(opts.policy, &indexed, |(i, path)| {
        let seed = opts.seed.wrapping_add(*i as u64);
        let mut entry = ManifestEntry {
            path: path.display().to_string(),
            face_count: 0,
            ratio: 0.0,
            accepted: false,
            rejection_reason: RejectionReason::TooFewFaces,
            seed,
            output: None,
            error: None,
        };
        let result = load_mesh(path).and_then(|m| preprocess_mesh(&m, opts, seed));
        match result {
            Ok((mesh, report)) => {
                entry.face_count = report.face_count;
                entry.ratio = report.point_face_ratio;
                entry.accepted = report.accepted;
                entry.rejection_reason = report.rejection_reason;
                if let Some(m) = mesh {
                    let out = output.join(path.file_name().unwrap());
                    match save_mesh(&m, &out) {
                        Ok(()) => entry.output = Some(out.display().to_string()),
                        Err(e) => {
                            entry.accepted = false;
                            entry.error = Some(e.to_string());
                        }
                    }
                }
            }
            Err(e) => entry.error = Some(e.to_string()),
        }
        entry
    });
    write_manifest(&output.join("manifest.jsonl"), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut s = String::new();
    for e in entries {
        s.push_str(&serde_json::to_string(e)?);
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
