"""Differentiable non-local filtering on the permutohedral lattice."""
from .dense import attention_dense, calibration_gain, compare, nlm_dense
from .filter import (DegenerateNormalizerError, FilterOptions, FilterTape, blur, filter_with_tape,
                     lattice_operator, permutohedral_filter, slice_values, splat)
from .gradients import (GradcheckReport, barycentric_vjp, finite_difference_check, vjp_descriptors,
                        vjp_features)
from .io import (FormatError, Image, read_bench_csv, read_image, read_tensor, write_bench_csv,
                 write_image, write_tensor)
from .lattice import (Embedding, SimplexRecords, VertexTable, build_lattice, elevate, find_simplex,
                      locate_points, make_embedding)
from .pam import (PamParams, StaleTapeError, coordinate_mesh, extract_descriptors, extract_features,
                  init_params, pam_backward, pam_forward)
from .toy import BlobTask, TrainingDiverged, init_toy_model, train_toy

__version__ = "0.1.0"
