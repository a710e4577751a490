//! Deterministic synthetic task streams and CSV ingestion.
//!
//! Streams are reproducible bit-for-bit from (spec, seed). Class ids are
//! disjoint across tasks, matching the class-incremental protocol where
//! evaluation always runs over the union of classes seen so far.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::Matrix;
use crate::network::Batch;
use crate::rng;
use crate::Result;

/// One task: train and test splits plus the class ids it introduces.
#[derive(Debug, Clone)]
pub struct Task {
    pub train: Batch,
    pub test: Batch,
    pub class_ids: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub input_dim: usize,
    pub spec: StreamSpec,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn total_classes(&self) -> usize {
        self.tasks.iter().map(|t| t.class_ids.len()).sum()
    }
}

/// Generator descriptor; the committed config serializes one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StreamSpec {
    Gaussian {
        tasks: usize,
        classes_per_task: usize,
        input_dim: usize,
        separation: f64,
        train_per_class: usize,
        test_per_class: usize,
    },
    Rotated {
        tasks: usize,
        classes_per_task: usize,
        input_dim: usize,
        separation: f64,
        train_per_class: usize,
        test_per_class: usize,
        angle_step_deg: f64,
        /// Relabel every task with fresh class ids (class-incremental).
        /// When false, tasks revisit the same classes (domain-incremental).
        #[serde(default = "default_true")]
        fresh_labels: bool,
    },
    Csv {
        manifest: String,
    },
}

impl StreamSpec {
    pub fn build(&self, seed: u64) -> Result<TaskStream> {
        match self {
            StreamSpec::Gaussian {
                tasks,
                classes_per_task,
                input_dim,
                separation,
                train_per_class,
                test_per_class,
            } => gen_gaussian_stream(
                *tasks,
                *classes_per_task,
                *input_dim,
                *separation,
                *train_per_class,
                *test_per_class,
                seed,
            ),
            StreamSpec::Rotated {
                tasks,
                classes_per_task,
                input_dim,
                separation,
                train_per_class,
                test_per_class,
                angle_step_deg,
                fresh_labels,
            } => gen_rotated_stream(
                *tasks,
                *classes_per_task,
                *input_dim,
                *separation,
                *train_per_class,
                *test_per_class,
                angle_step_deg.to_radians(),
                *fresh_labels,
                seed,
            ),
            StreamSpec::Csv { manifest } => load_csv_stream(Path::new(manifest)),
        }
    }
}

fn default_true() -> bool {
    true
}

fn unit_direction(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = rng::normal_vec(rng, d);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn validate_counts(
    tasks: usize,
    classes_per_task: usize,
    input_dim: usize,
    separation: f64,
    train_per_class: usize,
    test_per_class: usize,
) -> Result<()> {
    if tasks == 0 {
        return Err(Error::EmptyStream);
    }
    if classes_per_task == 0 || input_dim == 0 || train_per_class == 0 || test_per_class == 0 {
        return Err(Error::InvalidInput("stream sizes must be positive".into()));
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return Err(Error::InvalidInput(format!("bad separation {separation}")));
    }
    Ok(())
}

/// Isotropic Gaussian blobs: each class gets a random mean of norm
/// `separation`; samples are mean plus unit noise. Classes are numbered
/// globally so tasks never share ids.
pub fn gen_gaussian_stream(
    tasks: usize,
    classes_per_task: usize,
    input_dim: usize,
    separation: f64,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<TaskStream> {
    validate_counts(tasks, classes_per_task, input_dim, separation, train_per_class, test_per_class)?;
    let spec = StreamSpec::Gaussian {
        tasks,
        classes_per_task,
        input_dim,
        separation,
        train_per_class,
        test_per_class,
    };
    let mut out = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let class_ids: Vec<usize> =
            (0..classes_per_task).map(|c| t * classes_per_task + c).collect();
        let means: Vec<Vec<f64>> = class_ids
            .iter()
            .map(|&g| {
                let mut r = rng::derive(seed, &[0x3EA7, g as u64]);
                unit_direction(&mut r, input_dim).into_iter().map(|x| x * separation).collect()
            })
            .collect();
        let train = sample_blobs(&class_ids, &means, train_per_class, seed, 1)?;
        let test = sample_blobs(&class_ids, &means, test_per_class, seed, 2)?;
        out.push(Task { train, test, class_ids });
    }
    Ok(TaskStream { tasks: out, input_dim, spec })
}

fn sample_blobs(
    class_ids: &[usize],
    means: &[Vec<f64>],
    per_class: usize,
    seed: u64,
    split_tag: u64,
) -> Result<Batch> {
    let d = means[0].len();
    let n = class_ids.len() * per_class;
    let mut x = Matrix::zeros(d, n);
    let mut y = Vec::with_capacity(n);
    let mut col = 0;
    for (ci, &g) in class_ids.iter().enumerate() {
        let mut r = rng::derive(seed, &[0x5A3B, split_tag, g as u64]);
        for _ in 0..per_class {
            for row in 0..d {
                x.set(row, col, means[ci][row] + rng::normal(&mut r));
            }
            y.push(g);
            col += 1;
        }
    }
    Batch::new(x, y)
}

/// Rotation by `angle` in the plane of the first two coordinates.
pub fn rotation_matrix(d: usize, angle: f64) -> Matrix {
    assert!(d >= 2, "rotation plane needs at least two dimensions");
    let mut r = Matrix::identity(d);
    let (s, c) = angle.sin_cos();
    r.set(0, 0, c);
    r.set(0, 1, -s);
    r.set(1, 0, s);
    r.set(1, 1, c);
    r
}

/// A fixed base task replayed under a growing rotation: task `t` (1-based)
/// sees the base samples rotated by `(t-1) * angle_step` in a fixed
/// 2-plane. With `fresh_labels` each task gets its own class ids; without,
/// tasks revisit classes `0..classes_per_task`. The same noise draws are
/// reused for every task, so a zero step yields identical tasks.
#[allow(clippy::too_many_arguments)]
pub fn gen_rotated_stream(
    tasks: usize,
    classes_per_task: usize,
    input_dim: usize,
    separation: f64,
    train_per_class: usize,
    test_per_class: usize,
    angle_step: f64,
    fresh_labels: bool,
    seed: u64,
) -> Result<TaskStream> {
    validate_counts(tasks, classes_per_task, input_dim, separation, train_per_class, test_per_class)?;
    if input_dim < 2 {
        return Err(Error::InvalidInput("rotated stream needs input_dim >= 2".into()));
    }
    if !angle_step.is_finite() {
        return Err(Error::InvalidInput("angle step must be finite".into()));
    }
    let spec = StreamSpec::Rotated {
        tasks,
        classes_per_task,
        input_dim,
        separation,
        train_per_class,
        test_per_class,
        angle_step_deg: angle_step.to_degrees(),
        fresh_labels,
    };
    let base_ids: Vec<usize> = (0..classes_per_task).collect();
    let means: Vec<Vec<f64>> = base_ids
        .iter()
        .map(|&c| {
            let mut r = rng::derive(seed, &[0x407A, c as u64]);
            unit_direction(&mut r, input_dim).into_iter().map(|x| x * separation).collect()
        })
        .collect();
    let base_train = sample_blobs(&base_ids, &means, train_per_class, seed, 1)?;
    let base_test = sample_blobs(&base_ids, &means, test_per_class, seed, 2)?;

    let mut out = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let rot = rotation_matrix(input_dim, t as f64 * angle_step);
        let shift = if fresh_labels { t * classes_per_task } else { 0 };
        let relabel = |batch: &Batch| -> Result<Batch> {
            let x = rot.matmul(&batch.x)?;
            let y = batch.y.iter().map(|&c| c + shift).collect();
            Batch::new(x, y)
        };
        out.push(Task {
            train: relabel(&base_train)?,
            test: relabel(&base_test)?,
            class_ids: (0..classes_per_task).map(|c| shift + c).collect(),
        });
    }
    Ok(TaskStream { tasks: out, input_dim, spec })
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvTaskEntry {
    train: String,
    test: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvStreamManifest {
    tasks: Vec<CsvTaskEntry>,
}

/// Load a stream from a JSON manifest listing per-task train/test CSVs.
/// Each CSV row is `feature,...,feature,label`; paths are relative to the
/// manifest. Labels across the whole stream must be contiguous from 0.
pub fn load_csv_stream(manifest_path: &Path) -> Result<TaskStream> {
    let text = std::fs::read_to_string(manifest_path)?;
    let manifest: CsvStreamManifest = serde_json::from_str(&text)?;
    if manifest.tasks.is_empty() {
        return Err(Error::EmptyStream);
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    let mut input_dim = None;
    for entry in &manifest.tasks {
        let train = load_csv_batch(&base.join(&entry.train), &mut input_dim)?;
        let test = load_csv_batch(&base.join(&entry.test), &mut input_dim)?;
        let mut class_ids: Vec<usize> = train.y.iter().chain(&test.y).copied().collect();
        class_ids.sort_unstable();
        class_ids.dedup();
        tasks.push(Task { train, test, class_ids });
    }
    // label contiguity across the stream
    let mut all: Vec<usize> = tasks
        .iter()
        .flat_map(|t| t.class_ids.iter().copied())
        .collect();
    all.sort_unstable();
    all.dedup();
    for (i, &l) in all.iter().enumerate() {
        if l != i {
            return Err(Error::InvalidLabels(format!(
                "labels must be contiguous from 0; missing {i}, found {l}"
            )));
        }
    }
    Ok(TaskStream {
        tasks,
        input_dim: input_dim.expect("at least one task"),
        spec: StreamSpec::Csv { manifest: manifest_path.display().to_string() },
    })
}

fn load_csv_batch(path: &Path, input_dim: &mut Option<usize>) -> Result<Batch> {
    let text = std::fs::read_to_string(path)?;
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("{}: rows need at least one feature and a label", path.display()),
            });
        }
        let d = fields.len() - 1;
        match *input_dim {
            None => *input_dim = Some(d),
            Some(expect) => {
                if d != expect {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!(
                            "{}: expected {expect} features, got {d}",
                            path.display()
                        ),
                    });
                }
            }
        }
        let mut row = Vec::with_capacity(d);
        for f in &fields[..d] {
            row.push(f.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("{}: bad feature {f:?}", path.display()),
            })?);
        }
        let label: usize = fields[d].trim().parse().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("{}: bad label {:?}", path.display(), fields[d]),
        })?;
        features.push(row);
        labels.push(label);
    }
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = features[0].len();
    let n = features.len();
    let mut x = Matrix::zeros(d, n);
    for (c, row) in features.iter().enumerate() {
        for (r, &v) in row.iter().enumerate() {
            x.set(r, c, v);
        }
    }
    Batch::new(x, labels)
}

/// Write a stream back out as per-task CSVs plus a manifest; inverse of
/// `load_csv_stream`.
pub fn export_csv_stream(stream: &TaskStream, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = CsvStreamManifest { tasks: Vec::new() };
    for (i, task) in stream.tasks.iter().enumerate() {
        let train = format!("task{}_train.csv", i + 1);
        let test = format!("task{}_test.csv", i + 1);
        crate::report::write_atomic(&dir.join(&train), batch_csv(&task.train).as_bytes())?;
        crate::report::write_atomic(&dir.join(&test), batch_csv(&task.test).as_bytes())?;
        manifest.tasks.push(CsvTaskEntry { train, test });
    }
    let path = dir.join("stream_manifest.json");
    crate::report::write_json_atomic(&path, &manifest)?;
    Ok(path)
}

fn batch_csv(batch: &Batch) -> String {
    let mut s = String::new();
    for c in 0..batch.x.cols() {
        for r in 0..batch.x.rows() {
            s.push_str(&format!("{},", batch.x.get(r, c)));
        }
        s.push_str(&format!("{}\n", batch.y[c]));
    }
    s
}
