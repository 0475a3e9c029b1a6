"""Generative latent replay for domain-incremental continual learning.

The engine trains a classifier head on precomputed feature streams and
fights catastrophic forgetting by replaying feature rows sampled from
per-(domain, class) Gaussian mixture generators instead of stored samples.
"""

from .baselines import (
    ReplayBuffer,
    run_buffer_replay,
    run_cumulative,
    run_joint,
    run_naive,
)
from .gmm import EmConfig, FitReport, GmmGenerator, bic, fit_em, log_likelihood, select_k
from .metrics import AccuracyMatrix, avg_accuracy, bwt, ilm
from .nnet import AdamWState, HeadConfig, MlpHead, adamw_step, loss_and_grad, predict
from .replay import (
    GeneratorPool,
    ReplayConfig,
    RunResult,
    compose_batch,
    run_glrcl,
    train_session,
    update_pool,
)
from .streams import (
    LabeledFeatureBatch,
    SyntheticShiftSpec,
    TaskDataset,
    TaskStream,
    generate_stream,
    load_stream,
    save_stream,
)
from .tensor import Rng, cholesky, mvn_logpdf, mvn_sample, standard_normal

__version__ = "0.1.0"
