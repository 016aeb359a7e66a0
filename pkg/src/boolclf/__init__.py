"""boolclf: compose binary classifiers for boolean expressions of concepts.

Primitive concepts are linear classifiers; negation flips the hyperplane,
conjunction is a learned network, disjunction is derived from the two, and
arbitrary expressions compose by post-order traversal of their parse tree.
"""

from .algebra import (
    CompositionNet,
    compose,
    compose_backward,
    g_and,
    g_not,
    g_or,
    init_composition_net,
    score,
    score_batch,
)
from .datakit import (
    Dataset,
    FilterConfig,
    SplitConfig,
    SplitSpec,
    SyntheticConfig,
    enumerate_and_filter,
    enumerate_binary,
    expr_label,
    load_bank,
    load_dataset,
    load_net,
    load_split,
    make_splits,
    save_bank,
    save_dataset,
    save_net,
    save_split,
    synth_generate,
)
from .evalkit import (
    ChanceScorer,
    ComposedScorer,
    IndependentScorer,
    MetricsReport,
    PairSet,
    ScoredPair,
    SupervisedScorer,
    baseline_chance,
    baseline_independent,
    baseline_supervised,
    complexity_sweep,
    evaluate,
    global_auc,
    global_eer,
    global_map,
)
from .exprlang import (
    And,
    Expression,
    Not,
    Or,
    Primitive,
    eval_truth,
    parse,
    post_order,
    random_binary_expressions,
    random_cnf,
    random_expression,
    to_cnf,
    to_nnf,
    unparse,
)
from .numcore import adam_state, finite_diff, leaky_relu, leaky_relu_grad, opt_step, rng_stream, sgd_state
from .primitives import (
    BankConfig,
    Classifier,
    PlattParams,
    PrimitiveBank,
    SvmConfig,
    calibrate_bank,
    platt_apply,
    platt_fit,
    train_linear_svm,
    train_primitive_bank,
)
from .training import TrainConfig, finetune_cnf, hinge, objective, sample_batch, train

__version__ = "0.1.0"
