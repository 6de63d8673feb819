"""Semantic measurement control and Gaussian shape uncertainty for linear
blend-shape body models."""

__version__ = "0.1.0"

from .errors import (CapacityError, FormatError, InvalidArgumentError, NumericalError,
                     RankDeficiencyWarning, SemshapeError, SingularityError)
from .gaussian import (DiagGaussian, FactoredGaussian, FullGaussian, MeasurementObservation,
                       clamp_variances, directional_vertex_variance, fuse, fused_shape_estimate,
                       load_observations, naive_average, propagate_to_coeffs,
                       propagate_to_vertices, save_observations)
from .measurements import (JointId, Kind, MeasurementDef, MeasurementSpec, VertexId,
                           axis_difference_spec, load_spec, measure, measure_batch,
                           measurement_jacobian, save_spec, smpl_spec_template, synthetic_spec)
from .regressor import (FitConfig, MeasurementRegressor, apply_measurement_offset,
                        eval_local_offsets, eval_reconstruction, fit_regressor,
                        load_regressor, measurements_to_coeff_offset, sample_shapes,
                        save_regressor)
from .shape_model import (LinearShapeModel, Mesh, export_obj, generate_synthetic_model,
                          load_model, save_model, shape_to_vertices)
