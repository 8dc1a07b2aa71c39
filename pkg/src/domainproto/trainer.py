"""Training orchestration: the full per-fold loop (adversarial decoupling,
epoch-wise MMD aggregation, prototype maintenance, pairwise objective),
leave-one-subject-out protocols, and the noise/superdomain-count sweeps.

Per epoch: minibatch passes accumulate gradients from the decoupling losses,
the pairwise (or pointwise) objective against the current prototype bank,
the affinity-alignment term for the bilinear picker, and soft regularization,
then apply SGD. At epoch end the squared-MMD matrix between the epoch's
per-subject domain features is rebuilt, domains are re-aggregated into
superdomains, the bank is re-keyed to the new labeling, and fresh prototypes
are blended in. The first epoch runs with a single superdomain since the
domain features are still untrained noise. Target data is never read during
training; an access counter proves it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .dataio import (
    AuditedDataset,
    Dataset,
    apply_fold,
    inject_label_noise,
    make_splits,
)
from .decouple import backprop_decoupled, decouple_forward, loss_cls, loss_dom, loss_fd
from .errors import ConfigError, TrainingError
from .inference import (
    BilinearMap,
    add_weight_penalty_grads,
    affinity_alignment_loss,
    class_probs,
    class_probs_backward,
    pairwise_loss,
    pointwise_loss,
    predict_batch,
    total_loss,
    weight_penalty,
)
from .mmd import KernelConfig, SuperdomainAssignment, aggregate, mmd_matrix, vector_distance_matrix
from .nets import DenseNet, LayerSpec, one_hot, sgd_step
from .prototypes import (
    AlphaSchedule,
    PrototypeBank,
    adaptive_update,
    compute_fresh_prototypes,
    rekey_bank,
)

ABLATIONS = (
    "domain-prototype",  # skip the superdomain stage at inference; no bilinear training
    "cls-disc-loss",  # drop the class-discriminator term
    "dom-disc-loss",  # drop the domain-discriminator term
    "aggregation",  # keep every domain in one superdomain (no aggregation)
    "adaptive-alpha",  # freeze the prototype blend weight at alpha_high
    "pointwise",  # per-sample cross-entropy instead of the pairwise objective
    "identity-bilinear",  # freeze the bilinear form to the identity
    "soft-reg",  # drop the weight-norm regularizer
)

AGGREGATE_SPACES = ("mmd", "vectors")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a run. Values marked [method] are fixed by the published
    method description; [tool] values are choices this implementation exposes
    because the method leaves them open."""

    n_superdomains: int = 4  # [method] K
    alpha_high: float = 0.8  # [method]
    alpha_low: float = 0.2  # [method]
    alpha_power: float = 2.0  # [method]
    beta: float = 0.01  # [method] soft-regularization weight
    hidden_dim: int = 64  # [method] width of every hidden/feature layer
    leaky_slope: float = 0.01  # [method]
    dropout: float = 0.25  # [method] discriminator dropout
    grl_lambda: float = 1.0  # [tool] gradient reversal strength
    lr: float = 1e-3  # [tool]
    weight_decay: float = 0.0  # [tool]
    batch_size: int = 256  # [tool]
    max_epoch: int = 100  # [tool]
    seed: int = 0  # [tool]
    kernel_bandwidth: float | None = None  # [tool] None = median heuristic
    mmd_subsample: int = 2000  # [tool] rows used by the median heuristic
    aggregate_every: int = 1  # [tool] epochs between re-aggregations
    aggregate_on: str = "mmd"  # [tool] "mmd" or "vectors" geometry
    balanced_domains: bool = False  # [tool] stratify batches by subject
    label_noise: float = 0.0  # [method] source-label corruption fraction eta
    ablations: tuple[str, ...] = ()  # [method] study switches

    def __post_init__(self):
        if self.n_superdomains < 1:
            raise ConfigError(f"n_superdomains must be >= 1, got {self.n_superdomains}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.max_epoch < 1:
            raise ConfigError("max_epoch must be >= 1")
        if self.aggregate_every < 1:
            raise ConfigError("aggregate_every must be >= 1")
        if self.aggregate_on not in AGGREGATE_SPACES:
            raise ConfigError(f"aggregate_on must be one of {AGGREGATE_SPACES}")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError("label_noise must be in [0, 1]")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ConfigError(f"unknown ablations: {sorted(unknown)}")
        # delegate range checks for the schedule
        AlphaSchedule(self.alpha_high, self.alpha_low, self.alpha_power, self.max_epoch)

    def ablated(self, name: str) -> bool:
        return name in self.ablations

    def with_ablations(self, *names: str) -> "TrainConfig":
        return replace(self, ablations=tuple(dict.fromkeys(self.ablations + names)))


@dataclass
class Model:
    """The five networks plus the bilinear superdomain picker."""

    f_g: DenseNet
    f_d: DenseNet
    f_c: DenseNet
    d_d: DenseNet
    d_c: DenseNet
    theta: BilinearMap
    n_subjects: int
    n_classes: int

    def param_grad_pairs(self):
        for net in (self.f_g, self.f_d, self.f_c, self.d_d, self.d_c):
            yield from net.param_grad_pairs()
        yield from self.theta.param_grad_pairs()

    def weight_arrays(self):
        out = []
        for net in (self.f_g, self.f_d, self.f_c, self.d_d, self.d_c):
            out.extend(net.weight_arrays())
        out.extend(self.theta.weight_arrays())
        return out

    def weight_grad_arrays(self):
        out = []
        for net in (self.f_g, self.f_d, self.f_c, self.d_d, self.d_c):
            out.extend(net.grad_w)
        if self.theta.trainable:
            out.append(self.theta.grad)
        return out


def build_model(
    feature_dim: int, n_subjects: int, n_classes: int, cfg: TrainConfig, rng: np.random.Generator
) -> Model:
    """Network stack: extractor feature_dim->h->h->h with leaky relu, relu
    decouplers h->h->h->h, discriminators h->h(dropout)->h(sigmoid)->labels."""
    h = cfg.hidden_dim
    slope = cfg.leaky_slope
    f_g = DenseNet(
        [
            LayerSpec(feature_dim, h, "leaky_relu", slope=slope),
            LayerSpec(h, h, "leaky_relu", slope=slope),
            LayerSpec(h, h, "identity"),
        ],
        rng,
    )

    def decoupler():
        return DenseNet(
            [LayerSpec(h, h, "relu"), LayerSpec(h, h, "relu"), LayerSpec(h, h, "identity")], rng
        )

    def discriminator(n_out):
        return DenseNet(
            [
                LayerSpec(h, h, "identity", dropout_p=cfg.dropout),
                LayerSpec(h, h, "sigmoid"),
                LayerSpec(h, n_out, "sigmoid"),
            ],
            rng,
        )

    return Model(
        f_g=f_g,
        f_d=decoupler(),
        f_c=decoupler(),
        d_d=discriminator(n_subjects),
        d_c=discriminator(n_classes),
        theta=BilinearMap(h, rng, identity=cfg.ablated("identity-bilinear")),
        n_subjects=n_subjects,
        n_classes=n_classes,
    )


@dataclass
class StepLosses:
    """Loss components of one batch pass.

    `total` is the reported objective (decoupling + pairwise + beta * reg);
    `optimized` additionally includes the affinity-alignment surrogate whose
    gradients train the bilinear picker.
    """

    l_cls: float
    l_dom: float
    l_fd: float
    l_pair: float
    l_align: float
    penalty: float
    total: float
    optimized: float
    x_d: np.ndarray | None = None
    x_c: np.ndarray | None = None


def compute_batch(
    model: Model,
    x: np.ndarray,
    class_labels: np.ndarray,
    subject_ids: np.ndarray,
    cfg: TrainConfig,
    bank: PrototypeBank | None = None,
    subject_to_sd: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    collect_grads: bool = True,
    grl_adjusted_value: bool = False,
):
    """One batch through every loss term.

    With collect_grads the parameter gradient buffers are filled (caller
    applies sgd_step); without it only loss values are computed, with eval
    forwards. grl_adjusted_value flips the sign of the reversed discriminator
    terms in the returned values: that variant is the scalar whose true
    gradient the backward pass delivers to the extractor and decouplers, used
    by gradient checks.
    """
    lam = cfg.grl_lambda
    x_d, x_c, caches = decouple_forward(
        model.f_g, model.f_d, model.f_c, x, train=collect_grads, rng=rng
    )
    y_c = one_hot(class_labels, model.n_classes)
    y_d = one_hot(subject_ids, model.n_subjects)
    g_xd = np.zeros_like(x_d)
    g_xc = np.zeros_like(x_c)

    l_cls = l_dom = 0.0
    if not cfg.ablated("cls-disc-loss"):
        if collect_grads:
            l_cls, g1, g2 = loss_cls(model.d_c, x_c, x_d, y_c, lam=lam, rng=rng)
            g_xc += g1
            g_xd += g2
        else:
            l_cls = _disc_loss_value(model.d_c, x_c, x_d, y_c, lam, grl_adjusted_value)
    if not cfg.ablated("dom-disc-loss"):
        if collect_grads:
            l_dom, g1, g2 = loss_dom(model.d_d, x_d, x_c, y_d, lam=lam, rng=rng)
            g_xd += g1
            g_xc += g2
        else:
            l_dom = _disc_loss_value(model.d_d, x_d, x_c, y_d, lam, grl_adjusted_value)
    l_fd = loss_fd(l_cls, l_dom)

    l_pair = l_align = 0.0
    if bank is not None and subject_to_sd is not None:
        known_sd = subject_to_sd[subject_ids]
        p = np.zeros((x.shape[0], model.n_classes))
        sd_caches = {}
        for sd in np.unique(known_sd):
            rows = np.flatnonzero(known_sd == sd)
            p[rows], sd_caches[sd] = class_probs(x_c[rows], bank, int(sd))
        loss_fn = pointwise_loss if cfg.ablated("pointwise") else pairwise_loss
        l_pair, d_p = loss_fn(p, class_labels)
        if collect_grads:
            for sd, cache in sd_caches.items():
                rows = np.flatnonzero(known_sd == sd)
                g_xc[rows] += class_probs_backward(cache, d_p[rows])
        if not cfg.ablated("domain-prototype"):
            l_align, d_theta, d_xd = affinity_alignment_loss(
                x_d, model.theta.matrix, bank.mu_d, known_sd
            )
            if collect_grads:
                if model.theta.trainable:
                    model.theta.grad += d_theta
                g_xd += d_xd

    penalty = 0.0
    if not cfg.ablated("soft-reg"):
        penalty = weight_penalty(model.weight_arrays())
        if collect_grads:
            add_weight_penalty_grads(
                model.weight_arrays(), model.weight_grad_arrays(), cfg.beta
            )

    if collect_grads:
        backprop_decoupled(model.f_g, model.f_d, model.f_c, caches, g_xd, g_xc)

    total = total_loss(l_fd, l_pair, penalty, cfg.beta)
    return StepLosses(
        l_cls=l_cls,
        l_dom=l_dom,
        l_fd=l_fd,
        l_pair=l_pair,
        l_align=l_align,
        penalty=penalty,
        total=total,
        optimized=total + l_align,
        x_d=x_d,
        x_c=x_c,
    )


def _disc_loss_value(disc, x_direct, x_reversed, targets, lam, grl_adjusted):
    """Value-only discriminator loss; optionally with the reversed term as
    seen from upstream of the GRL (times -lam)."""
    from .nets import bce

    direct = bce(disc.forward(x_direct)[0], targets)[0]
    reversed_ = bce(disc.forward(x_reversed)[0], targets)[0]
    if grl_adjusted:
        return direct - lam * reversed_
    return direct + reversed_


def _batch_indices(rng, subjects, batch_size, balanced):
    """Minibatch index lists; trailing batches of size < 2 are dropped."""
    n = subjects.shape[0]
    if balanced:
        per_subject = [rng.permutation(np.flatnonzero(subjects == s)) for s in np.unique(subjects)]
        order = np.array(
            [i for tup in _round_robin(per_subject) for i in tup], dtype=int
        )
    else:
        order = rng.permutation(n)
    batches = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if b.shape[0] >= 2]


def _round_robin(lists):
    iters = [iter(lst) for lst in lists]
    while iters:
        alive = []
        row = []
        for it in iters:
            try:
                row.append((next(it),))
                alive.append(it)
            except StopIteration:
                pass
        if row:
            yield tuple(i for tup in row for i in tup)
        iters = alive


@dataclass
class FoldState:
    """Everything training produces for one fold."""

    model: Model
    bank: PrototypeBank
    assignment: SuperdomainAssignment
    subject_to_sd: np.ndarray
    config: TrainConfig
    history: list = field(default_factory=list)
    op_trace: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)


def train_fold(
    source: Dataset, cfg: TrainConfig, fold_index: int = 0, collect_diagnostics: bool = False
) -> FoldState:
    """Train one fold on source subjects only; the target is never passed in.

    A single-subject source degenerates gracefully (trivial domain
    discrimination, one superdomain) so that two-subject datasets can still
    run the full leave-one-out protocol.
    """
    if set(np.unique(source.labels)) != set(range(source.n_classes)):
        raise TrainingError("every class must appear in the source domain")

    rng = np.random.default_rng([cfg.seed, fold_index])
    if cfg.label_noise > 0.0:
        noise_seed = int(rng.integers(2**31))
        source = inject_label_noise(source, cfg.label_noise, noise_seed)

    model = build_model(source.feature_dim, source.n_subjects, source.n_classes, cfg, rng)
    sched = AlphaSchedule(
        alpha_high=cfg.alpha_high,
        alpha_low=cfg.alpha_high if cfg.ablated("adaptive-alpha") else cfg.alpha_low,
        power=cfg.alpha_power,
        max_epoch=cfg.max_epoch,
    )
    kernel = KernelConfig(bandwidth=cfg.kernel_bandwidth, median_max_rows=cfg.mmd_subsample)
    k_target = 1 if cfg.ablated("aggregation") else min(cfg.n_superdomains, source.n_subjects)

    bank: PrototypeBank | None = None
    assignment = SuperdomainAssignment.trivial(source.n_subjects)
    subject_to_sd = assignment.assign
    history, op_trace, diagnostics = [], [], []

    for t in range(1, cfg.max_epoch + 1):
        batch_ops: list[str] = []
        sums = {"l_cls": 0.0, "l_dom": 0.0, "l_fd": 0.0, "l_pair": 0.0, "l_align": 0.0, "total": 0.0}
        xd_parts, xc_parts, label_parts, subject_parts = [], [], [], []
        batches = _batch_indices(rng, source.subjects, cfg.batch_size, cfg.balanced_domains)
        for idx in batches:
            step = compute_batch(
                model,
                source.features[idx],
                source.labels[idx],
                source.subjects[idx],
                cfg,
                bank=bank,
                subject_to_sd=subject_to_sd if bank is not None else None,
                rng=rng,
                collect_grads=True,
            )
            sgd_step(model.param_grad_pairs(), cfg.lr, cfg.weight_decay)
            for key in sums:
                sums[key] += getattr(step, key)
            xd_parts.append(step.x_d)
            xc_parts.append(step.x_c)
            label_parts.append(source.labels[idx])
            subject_parts.append(source.subjects[idx])
        if not batches:
            raise TrainingError("no usable minibatch (need >= 2 samples)")
        batch_ops = _epoch_batch_ops(cfg, bank is not None)

        x_d_all = np.vstack(xd_parts)
        x_c_all = np.vstack(xc_parts)
        labels_all = np.concatenate(label_parts)
        subjects_all = np.concatenate(subject_parts)

        epoch_ops = []
        if t == 1 or k_target == 1:
            assignment = SuperdomainAssignment.trivial(source.n_subjects)
            epoch_ops.append("trivial-assignment")
        elif (t - 1) % cfg.aggregate_every == 0:
            per_subject = [x_d_all[subjects_all == s] for s in range(source.n_subjects)]
            mat = mmd_matrix(per_subject, kernel)
            dist = vector_distance_matrix(mat) if cfg.aggregate_on == "vectors" else mat
            assignment = aggregate(dist, k_target, rng)
            epoch_ops += ["mmd-matrix", "aggregate"]
            if collect_diagnostics:
                diagnostics.append(
                    {"epoch": t, "mmd_matrix": mat.tolist(), "assignment": assignment.assign.tolist()}
                )
        subject_to_sd = assignment.assign

        sd_rows = subject_to_sd[subjects_all]
        fresh_mu_d, d_mask, fresh_mu_c, c_mask = compute_fresh_prototypes(
            x_d_all, x_c_all, labels_all, sd_rows, assignment.k, source.n_classes
        )
        if bank is None:
            bank = PrototypeBank(assignment.k, source.n_classes, x_d_all.shape[1])
        elif bank.k != assignment.k or "aggregate" in epoch_ops:
            bank = rekey_bank(bank, fresh_mu_d, d_mask, assignment.k)
            epoch_ops.append("rekey-bank")
        bank = adaptive_update(bank, fresh_mu_d, d_mask, fresh_mu_c, c_mask, t, sched)
        epoch_ops.append("update-bank")

        n_batches = len(batches)
        history.append(
            {
                "epoch": t,
                **{k: v / n_batches for k, v in sums.items()},
                "alpha": _alpha_for_epoch(t, sched),
                "k": assignment.k,
                "prototype_norm": float(np.linalg.norm(bank.mu_d)),
            }
        )
        op_trace.append({"epoch": t, "batch_ops": batch_ops, "epoch_ops": epoch_ops})

    return FoldState(
        model=model,
        bank=bank,
        assignment=assignment,
        subject_to_sd=subject_to_sd,
        config=cfg,
        history=history,
        op_trace=op_trace,
        diagnostics=diagnostics,
    )


def _alpha_for_epoch(t, sched):
    from .prototypes import alpha_at

    return alpha_at(t, sched)


def _epoch_batch_ops(cfg: TrainConfig, bank_ready: bool) -> list[str]:
    ops = ["decouple-forward"]
    if not cfg.ablated("cls-disc-loss"):
        ops.append("loss-cls")
    if not cfg.ablated("dom-disc-loss"):
        ops.append("loss-dom")
    if bank_ready:
        ops.append("pointwise-loss" if cfg.ablated("pointwise") else "pairwise-loss")
        if not cfg.ablated("domain-prototype"):
            ops.append("affinity-alignment")
    if not cfg.ablated("soft-reg"):
        ops.append("soft-reg")
    ops.append("sgd-step")
    return ops


def decouple_eval(model: Model, features: np.ndarray):
    """Eval-mode decoupled features for prediction paths."""
    x_d, x_c, _ = decouple_forward(model.f_g, model.f_d, model.f_c, features)
    return x_d, x_c


def evaluate(state: FoldState, target) -> dict:
    """Score a trained fold on target samples; returns metrics + predictions.

    `target` may be a Dataset or an AuditedDataset wrapper.
    """
    features = target.features
    labels = target.labels
    x_d, x_c = decouple_eval(state.model, features)
    preds, k_star, v, p = predict_batch(
        x_d,
        x_c,
        state.bank,
        state.model.theta.matrix,
        use_domain_prototype=not state.config.ablated("domain-prototype"),
    )
    m = state.bank.n_classes
    confusion = np.zeros((m, m), dtype=int)
    np.add.at(confusion, (labels, preds), 1)
    return {
        "accuracy": float((preds == labels).mean()) if len(labels) else 0.0,
        "n_samples": int(len(labels)),
        "confusion": confusion,
        "predictions": preds,
        "superdomains": k_star,
        "max_affinity": v.max(axis=1),
        "max_class_prob": p.max(axis=1),
    }


@dataclass
class RunReport:
    """Cross-validation outcome in the tables' mean +/- std format."""

    protocol: str
    config: dict
    fold_accuracies: list[float]
    mean_accuracy: float
    std_accuracy: float
    confusion: list  # summed over folds, rows = true, cols = predicted
    per_fold: list
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @staticmethod
    def from_fold_results(protocol: str, cfg: TrainConfig, fold_results: list[dict]) -> "RunReport":
        accs = [fr["accuracy"] for fr in fold_results]
        m = len(fold_results[0]["confusion"])
        confusion = np.zeros((m, m), dtype=int)
        for fr in fold_results:
            confusion += np.asarray(fr["confusion"], dtype=int)
        return RunReport(
            protocol=protocol,
            config=config_to_dict(cfg),
            fold_accuracies=accs,
            mean_accuracy=float(np.mean(accs)),
            std_accuracy=float(np.std(accs)),
            confusion=confusion.tolist(),
            per_fold=fold_results,
        )


def config_to_dict(cfg: TrainConfig) -> dict:
    out = asdict(cfg)
    out["ablations"] = list(cfg.ablations)
    return out


def run_fold(ds: Dataset, fold, fold_index: int, cfg: TrainConfig, collect_diagnostics=False):
    """Train and evaluate one fold; returns (fold result dict, FoldState)."""
    source, target = apply_fold(ds, fold)
    audited = AuditedDataset(target)
    state = train_fold(source, cfg, fold_index, collect_diagnostics)
    reads_before_eval = audited.reads  # train_fold never saw the wrapper
    result = evaluate(state, audited)
    fold_result = {
        "fold": fold_index,
        "target_subject": fold.target_subject,
        "accuracy": result["accuracy"],
        "n_samples": result["n_samples"],
        "confusion": result["confusion"].tolist(),
        "target_reads_before_eval": reads_before_eval,
        "final_k": int(state.assignment.k),
        "subject_to_superdomain": state.subject_to_sd.tolist(),
        "loss_curve": state.history,
    }
    return fold_result, state


def run_protocol(
    ds: Dataset,
    protocol: str,
    cfg: TrainConfig,
    jobs: int = 1,
    keep_states: bool = False,
    collect_diagnostics: bool = False,
):
    """Full leave-one-subject-out run; folds are independent and may run in
    parallel without changing any result (each fold derives its own rng from
    (seed, fold index)). Returns (RunReport, states or None)."""
    plan = make_splits(ds, protocol)
    args = [(ds, fold, i, cfg, collect_diagnostics) for i, fold in enumerate(plan.folds)]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_fold_star, args))
    else:
        outcomes = [_run_fold_star(a) for a in args]
    fold_results = [fr for fr, _ in outcomes]
    report = RunReport.from_fold_results(protocol, cfg, fold_results)
    states = [st for _, st in outcomes] if keep_states else None
    return report, states


def _run_fold_star(args):
    return run_fold(*args)


def noise_sweep(ds: Dataset, etas, cfg: TrainConfig, protocol: str, jobs: int = 1):
    """Pointwise vs pairwise accuracy across label-noise fractions.

    Both learning modes share seeds per eta; rows come back in eta order,
    shaped like (eta, pointwise, pairwise) accuracy columns.
    """
    rows = []
    for eta in etas:
        base = replace(cfg, label_noise=float(eta))
        pair_report, _ = run_protocol(ds, protocol, base, jobs=jobs)
        point_report, _ = run_protocol(ds, protocol, base.with_ablations("pointwise"), jobs=jobs)
        rows.append(
            {
                "eta": float(eta),
                "pointwise_accuracy": point_report.mean_accuracy,
                "pointwise_std": point_report.std_accuracy,
                "pairwise_accuracy": pair_report.mean_accuracy,
                "pairwise_std": pair_report.std_accuracy,
            }
        )
    return rows


def k_sweep(ds: Dataset, ks, cfg: TrainConfig, protocol: str, jobs: int = 1):
    """One full protocol run per superdomain count, shared seeds."""
    rows = []
    for k in ks:
        report, _ = run_protocol(ds, protocol, replace(cfg, n_superdomains=int(k)), jobs=jobs)
        rows.append(
            {
                "k": int(k),
                "mean_accuracy": report.mean_accuracy,
                "std_accuracy": report.std_accuracy,
            }
        )
    return rows
