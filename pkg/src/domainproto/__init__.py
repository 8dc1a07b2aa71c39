"""Cross-subject transfer learning on dense feature vectors.

Pipeline: adversarial decoupling of domain vs. class features, MMD-based
aggregation of per-subject domains into superdomains, adaptive domain/class
prototype maintenance, prototype-based inference on a completely unseen
target domain, and pairwise-similarity training that tolerates label noise.
"""

__version__ = "0.1.0"

from .dataio import (  # noqa: E402,F401
    CROSS_SESSION,
    SINGLE_SESSION,
    CsvSchema,
    Dataset,
    Sample,
    SplitPlan,
    SynthConfig,
    inject_label_noise,
    load_csv,
    make_splits,
    synth_generate,
    write_csv,
)
from .mmd import KernelConfig, SuperdomainAssignment, aggregate, mmd2_unbiased, mmd_matrix  # noqa: F401
from .prototypes import AlphaSchedule, PrototypeBank, adaptive_update, alpha_at  # noqa: F401
from .trainer import (  # noqa: F401
    RunReport,
    TrainConfig,
    evaluate,
    k_sweep,
    noise_sweep,
    run_protocol,
    train_fold,
)
