"""Linear denoisers as scaled proximal maps, and scaled PnP-FISTA / PnP-ADMM."""

from .denoisers import (
    ConvolutionDenoiser,
    FrozenDenoiser,
    KernelDenoiser,
    LinearDenoiser,
    MatrixDenoiser,
    SinkhornError,
    SymmetricDenoiser,
    TwoWMinusWSquared,
    box_filter,
    build_dsg_nlm,
    build_nlm,
    denoise,
    gaussian_filter,
    scaling_matrix,
)
from .linops import (
    CirculantOperator,
    DenseMatrix,
    DiagonalOperator,
    DimensionError,
    EigenDecomposition,
    IdentityOperator,
    LinearOperator,
    MaskOperator,
    NoConvergenceError,
    power_dominant_eig,
    symmetric_eig,
)
from .proximal import (
    CGError,
    HMetric,
    QuadraticLoss,
    h_norm,
    prox_metric_transform,
    prox_quadratic_scaled,
    smoothness_constant,
)
from .restoration import (
    Psf,
    RestorationProblem,
    make_deblurring,
    make_inpainting,
    make_psf,
    median_init,
    psnr,
    read_image,
    synthetic_image,
    write_pgm,
)
from .solvers import (
    AdmmState,
    Diagnostics,
    FistaState,
    SolverAbort,
    scaled_pnp_admm,
    scaled_pnp_fista,
    standard_pnp_admm,
    standard_pnp_fista,
)
from .theory import (
    CounterexampleInstance,
    NotProximableError,
    ProximableCertificate,
    certify_proximable,
    eval_phi_direct,
    eval_phi_fast,
    moreau_check,
    run_counterexample,
    verify_scaled_prox,
)

__version__ = "0.1.0"
