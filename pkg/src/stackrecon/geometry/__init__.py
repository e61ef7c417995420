from .grids import FILL_FRACTION, SilhouetteImage, VoxelGrid
from .mesh import Mesh, MeshError, box_mesh, icosphere, load_mesh, normalize, parse_obj, write_obj
from .render import render_silhouette, voxel_projection
from .views import (
    DEFAULT_HARD_THRESHOLD_DEG,
    ViewAngle,
    camera_basis,
    is_hard_view,
    random_view_grid,
    training_view_grid,
    view_direction,
)
from .voxelize import voxelize
