"""Checks that a converged maximum-likelihood fit is not stuck in a spurious local optimum."""

from .model import (Dataset, Embedding, EvaluationError, GaussianLocationModel, ParamPoint, StatisticalModel,
                    additive_embedding, expected_loglik_gaussian, identity_embedding, log_likelihood_gaussian,
                    loglik_variance_gaussian, measurement_domain_embedding, noncentrality)
from .optimize import (NotStationaryError, OptimizeResult, gap_statistic, minimize_gaussian_batch, minimize_local,
                       restricted_relaxed_minimize)
from .sinusoid import (SinusoidModel, enumerate_local_minima, global_minimum, learned_direction_embedding,
                       naive_poly_embedding, negloglik_profile, relaxation)
from .validation import (ACCEPT, REJECT, BootstrapFailure, BootstrapMoments, DegenerateVarianceError, TestReport,
                         auc, bootstrap_moments, gap_test, one_sided_test, pd_at_pfa, rao_score_test, roc_points,
                         two_sided_test)
from .discovery import (DiscoveryConfig, NoSpuriousMinimaError, RelaxationDirection, discover_relaxation_direction,
                        iterate_discovery, whitened_score)
from .optics import (PSF, PupilGrid, ZernikeCoeffs, max_strehl_shell, psf_from_phase, psf_perturbation_bound,
                     restart_candidates, strehl, zernike_phase)

__version__ = "0.1.0"
