//! Region extraction: labeling, filling, contours, blobs, MSER, watershed, distance.

mod blob;
mod contours;
mod distance;
mod flood;
mod labels;
mod mser;
mod watershed;

pub use blob::{blob_detect, shape_of, Blob, BlobParams};
pub use contours::{fill_contours, find_contours, Contour, Hierarchy};
pub use distance::distance_transform;
pub use flood::{flood_fill, flood_region};
pub use labels::{connected_components, drop_small_components, LabelMap, RegionStats};
pub use mser::{mser, MserParams, MserRegion};
pub use watershed::{watershed, watershed_masked};

/// Label assigned to pixels where two watershed floods meet.
pub const WATERSHED_LINE: u32 = u32::MAX;
