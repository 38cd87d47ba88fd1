"""Three-stage training, evaluation, domain-shift runs and checkpoint persistence."""
from .checkpoint import Checkpoint, load_checkpoint, read_checkpoint, save_checkpoint
from .config import ABLATIONS, SCHEMA, RunConfig
from .domain_shift import PLANS, run_domain_shift
from .evaluate import SWAP_ROWS, evaluate_samples, load_model, run_eval, run_swap_study
from .schedule import lr_at, warmup_steps_for
from .train import StageResult, run_stage

__all__ = [
    "ABLATIONS", "PLANS", "SCHEMA", "SWAP_ROWS", "Checkpoint", "RunConfig", "StageResult",
    "evaluate_samples", "load_checkpoint", "load_model", "lr_at", "read_checkpoint", "run_domain_shift",
    "run_eval", "run_stage", "run_swap_study", "save_checkpoint", "warmup_steps_for",
]
