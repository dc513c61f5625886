//! Unsupervised discovery of moving and movable objects in LiDAR + camera
//! sequences.
//!
//! The crate is organized around a single alternating pipeline:
//!
//! - [`sim`] generates deterministic synthetic scenes (clouds, images,
//!   oracle annotations) and reads/writes the on-disk dataset format.
//! - [`geom`] holds the shared geometric vocabulary: rigid transforms,
//!   pinhole projection, ground removal, range cropping and IoU kernels.
//! - [`flow`] estimates per-point scene flow between consecutive frames.
//! - [`cluster`] groups points into instance candidates from spatial,
//!   image-plane and motion coordinates, and labels segments as moving
//!   foreground or background from their flow statistics.
//! - [`voteseg`] is the trainable 3D segmenter: per-point voting towards
//!   instance centers plus a foreground classifier.
//! - [`detect2d`] is the trainable 2D detector: fixed anchor grid, patch
//!   statistics descriptors and a logistic scorer.
//! - [`fusion`] exchanges evidence between the two views (projected boxes,
//!   box merging, segment relabeling) and enforces temporal consistency
//!   (Kalman tracklets, static-object rediscovery, label smoothing).
//! - [`pipeline`] wires everything into the alternating optimization loop
//!   and persists checkpoints, pseudo labels and reports.
//! - [`eval`] computes class-agnostic detection and segmentation metrics
//!   against oracle annotations.

pub mod ckpt;
pub mod cluster;
pub mod detect2d;
pub mod eval;
pub mod flow;
pub mod fusion;
pub mod geom;
pub mod pipeline;
pub mod prep;
pub mod rng;
pub mod sim;
pub mod voteseg;
