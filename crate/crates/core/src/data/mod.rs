//! Patch generation, labeling, normalization, augmentation, splitting, and
//! file formats.

pub mod dataset;
pub mod format;
pub mod mesh;
pub mod patch;
pub mod ply;
pub mod poisson;
pub mod shapes;
pub mod split;

pub use dataset::{canonical_frame, generate_dataset, generate_indexed, patch_file_name, write_dataset, DatasetSpec};
pub use format::{decode_patch, encode_patch, read_patch, write_patch};
pub use mesh::{load_obj, parse_obj, patch_from_mesh, poisson_sample_mesh, transfer_labels, TriMesh};
pub use patch::{augment_rotate, normalize_patch, rotate_patch, PatchMeta, PointPatch};
pub use ply::{save_ply, write_ply};
pub use shapes::{generate_patch, ShapeFamily, ShapeKind, ShapeSpec};
pub use split::{load_manifest, load_split, save_manifest, split_dataset, Split, SplitManifest, SPLIT_FILE};
