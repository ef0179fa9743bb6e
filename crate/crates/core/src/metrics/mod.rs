//! Image-pair and image-set measurements.

mod depth;
mod descriptor;
mod detect;
mod fid;
mod lowlevel;
mod report;
mod segment;
mod similarity;

pub use depth::{
    depth_rmse, depth_threshold_accuracy, silog, silog_with, DepthMap, DEPTH_THRESHOLD_EXPONENTS, SILOG_LAMBDA,
};
pub use descriptor::{
    early_features, embedding, fid_feature_matrix, fid_features, patch_features, EMBED_CELLS, FID_FEATURE_DIM,
};
pub use detect::{detection_compare, BBox, Detection, DetectionComparison, DetectionSet, MATCH_IOU};
pub use fid::{fid, FID_EPS};
pub use lowlevel::{
    filter2d, gabor_diff, gabor_kernel, gabor_response, psnr, sobel_density, sobel_edge_diff, GaborParams,
    GABOR_ORIENTATIONS, PSNR_CAP_DB,
};
pub use report::{
    build_reports, compute_report, read_reports_csv, read_vec1, write_reports_csv, write_vec1, FeatureReport,
    ImagePair, PairInputs, REPORT_FEATURES,
};
pub use segment::{kmeans, matched_miou, proto_object_miou, PROTO_CLUSTERS};
pub use similarity::{embed_distance, embed_similarity, layer_cosine};
