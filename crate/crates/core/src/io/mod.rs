//! File formats: OBJ/PLY meshes, the MTC1 tensor container, landmark JSON,
//! and P6/Pf image maps.

pub mod landmarks;
pub mod mtc1;
pub mod obj;
pub mod ply;
pub mod pnm;

pub use landmarks::{
    load_landmark_map, load_landmarks2, load_landmarks3, resolve_correspondences,
    save_landmark_map, save_landmarks2, save_landmarks3, Landmark2, Landmark3, LandmarkMap,
};
pub use mtc1::{load_features, load_model, save_features, save_model, Mtc1, Tensor};
pub use obj::{read_obj, write_obj};
pub use ply::{read_mesh_ply, read_ply, write_mesh_ply, write_ply};
pub use pnm::{DepthMap, RgbImage};
