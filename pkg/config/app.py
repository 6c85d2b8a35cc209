from utils.env import EnvConfig

# Reserved token ids shared by every module
PAD_ID = 0
EOS_ID = 1
BOS_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ["<pad>", "</s>", "<s>", "<unk>"]

# Desk-scale transformer, trainable on a CPU in minutes
DESK_MODEL_PRESET = {
    "num_layers": 2,
    "num_heads": 4,
    "d_model": 64,
    "d_ff": 128,
    "max_positions": 64,
    "dropout_rate": 0.1,
}

# Transformer-big style hyper-parameters; valid but never used in tests
PAPER_MODEL_PRESET = {
    "num_layers": 6,
    "num_heads": 8,
    "d_model": 512,
    "d_ff": 2048,
    "max_positions": 256,
    "dropout_rate": 0.1,
}

MODEL_PRESETS = {"desk": DESK_MODEL_PRESET, "paper": PAPER_MODEL_PRESET}

# Experiment grids
GAMMA_GRID = [0.1, 0.2, 0.3, 0.5, 0.7]
ALPHA_GRID = [0.2, 0.5, 0.7, 0.9, 1.0]
BEAM_SIZES = [1, 2, 4, 8, 16, 32, 64]

# Decoding
DEFAULT_MAX_STATES = 1_000_000
EXACT_SEED_BEAM_SIZE = 4

# Training
ADAM_BETAS = (0.9, 0.98)
ADAM_EPSILON = 1e-9
EARLY_STOPPING_PATIENCE = 5
MAX_TRAIN_STEPS = 20_000

# Evaluation
BOOTSTRAP_RESAMPLES = 1000
SIGNIFICANCE_LEVELS = {"‡": 0.01, "†": 0.05}

# Numbers in every CSV are written with this many significant digits
CSV_FLOAT_FORMAT = "%.9g"

CSV_SCHEMAS = {
    "train_log": ["step", "train_loss", "dev_loss", "dev_greedy_bleu", "learning_rate", "elapsed_seconds"],
    "decode_scores": ["line", "score", "length", "states_explored", "exact", "finished", "wall_time"],
    "decode_summary": ["mode", "beam_size", "sentences", "wall_time", "throughput", "approximate"],
    "sample_stats": [
        "gamma",
        "split",
        "pairs",
        "source_tokens",
        "target_tokens",
        "length_ratio",
        "expected_length_ratio",
        "conditional_entropy",
        "dropped_empty",
    ],
    "evaluate": ["system", "bleu", "p1", "p2", "p3", "p4", "brevity_penalty", "length_ratio", "hyp_tokens", "ref_tokens", "p_value", "win_rate", "mark"],
    "sweep_beam": [
        "head",
        "alpha",
        "beam_size",
        "bleu",
        "length_ratio",
        "search_error_rate",
        "mean_logprob",
        "num_sentences",
        "num_exact_excluded",
        "exact_not_terminated",
        "throughput",
    ],
    "sweep_alpha": [
        "head",
        "alpha",
        "greedy_bleu",
        "beam4_bleu",
        "exact_bleu",
        "exact_length_ratio",
        "exact_logprob_mean",
        "exact_logprob_std",
        "empty_logprob_mean",
        "empty_logprob_std",
        "logprob_gap",
        "exact_bleu_vs_softmax_beam4",
    ],
}

# Ordered list of wrappers applied around every command (lowest priority runs outermost)
MIDDLEWARE = [
    {"middleware": "middleware.error_boundary.ErrorBoundaryMiddleware", "priority": 1},
    {"middleware": "middleware.run_manifest.RunManifestMiddleware", "priority": 2},
]

TOOLS_MESSAGES_FILE = "config/default_tools_messages.json"

RUNS_DIR = EnvConfig.get("SCONES_RUNS_DIR", "runs")
DEFAULT_THREADS = EnvConfig.get_int("SCONES_THREADS", 1)
