"""stereorad: calibrated biplanar slot-scanner radiographic geometry toolkit."""

from stereorad.geometry import (
    CalibrationError,
    DegenerateGeometry,
    ImagePoint,
    PinholeCamera,
    Ray,
    RowMismatchWarning,
    ScannerCalibration,
    SingularProjection,
    StereoPair,
    View,
    WorldPoint,
    backproject_ray,
    epipolar_row,
    hss_default,
    load_calibration,
    pixel_to_isocenter_plane,
    project,
    project_frontal,
    project_homogeneous_frontal,
    project_lateral,
    project_pinhole,
    reconstruct,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "DegenerateGeometry",
    "ImagePoint",
    "PinholeCamera",
    "Ray",
    "RowMismatchWarning",
    "ScannerCalibration",
    "SingularProjection",
    "StereoPair",
    "View",
    "WorldPoint",
    "backproject_ray",
    "epipolar_row",
    "hss_default",
    "load_calibration",
    "pixel_to_isocenter_plane",
    "project",
    "project_frontal",
    "project_homogeneous_frontal",
    "project_lateral",
    "project_pinhole",
    "reconstruct",
    "__version__",
]
