"""eclipsekit: differentiable shadow-cylinder models and orbit propagation
around irregular small bodies."""

__version__ = "0.1.0"

from .errors import (
    BoundaryError,
    ConfigError,
    DatasetError,
    EclipseKitError,
    GeometryError,
    MasconError,
    MeshError,
    ModelError,
    PropagationError,
    TrainingError,
)
from .geometry import (
    MasconModel,
    Ray,
    TriangleMesh,
    fibonacci_sphere,
    generate_mascons_voxel,
    load_mascons,
    load_mesh,
    mesh_volume_centroid,
    point_in_polyhedron,
    ray_hits_mesh,
    ray_triangle_intersect,
    save_mascons,
    save_obj,
)
from .eclipse import (
    ProjectionFrame,
    ShadowSampler,
    SilhouetteBoundary,
    build_frame,
    check_gradient_identity,
    eclipse_function,
    eclipse_function_batch,
    extract_boundary,
    in_shadow_cylinder,
)
from .dataset import (
    EclipseDataset,
    EclipseSample,
    build_dataset,
    export_csv,
    load_dataset,
    sample_direction,
    save_dataset,
)
from .neuralnet import (
    MlpConfig,
    MlpModel,
    TrainConfig,
    infer_f,
    infer_f_batch,
    init_model,
    load_model,
    save_model,
    train,
)
from .dynamics import (
    DynamicsConfig,
    EclipseEvent,
    EclipseSource,
    NetworkSource,
    RayTraceSource,
    SpacecraftState,
    SphereSource,
    Trajectory,
    compare_trajectories,
    eclipse_indicator,
    propagate,
    sun_direction,
)
