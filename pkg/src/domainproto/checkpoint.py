"""Checkpoint container: one .npz file holding all five networks' parameters,
the bilinear matrix, the prototype bank, the superdomain assignment, and the
full run config, versioned with a format tag.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ConfigError
from .inference import BilinearMap
from .mmd import SuperdomainAssignment
from .nets import DenseNet, LayerSpec
from .prototypes import PrototypeBank
from .trainer import FoldState, Model, TrainConfig, config_to_dict

FORMAT_TAG = "domainproto-checkpoint"
FORMAT_VERSION = 1

_NETS = ("f_g", "f_d", "f_c", "d_d", "d_c")


def save_checkpoint(path, state: FoldState) -> None:
    arrays = {}
    specs = {}
    for name in _NETS:
        net: DenseNet = getattr(state.model, name)
        specs[name] = [
            {
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "activation": s.activation,
                "slope": s.slope,
                "dropout_p": s.dropout_p,
            }
            for s in net.specs
        ]
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            arrays[f"{name}_w{i}"] = w
            arrays[f"{name}_b{i}"] = b
    arrays["theta"] = state.model.theta.matrix
    arrays["bank_mu_d"] = state.bank.mu_d
    arrays["bank_mu_c"] = state.bank.mu_c
    arrays["bank_d_init"] = state.bank.d_init
    arrays["bank_c_init"] = state.bank.c_init
    arrays["assign"] = state.assignment.assign
    arrays["medoids"] = state.assignment.medoids
    arrays["subject_to_sd"] = state.subject_to_sd
    meta = {
        "format": FORMAT_TAG,
        "format_version": FORMAT_VERSION,
        "config": config_to_dict(state.config),
        "specs": specs,
        "theta_trainable": state.model.theta.trainable,
        "n_subjects": state.model.n_subjects,
        "n_classes": state.model.n_classes,
        "bank_epoch": state.bank.epoch,
        "assignment_k": int(state.assignment.k),
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> FoldState:
    with np.load(path) as data:
        if "meta" not in data:
            raise ConfigError(f"{path}: not a checkpoint (missing meta)")
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("format") != FORMAT_TAG:
            raise ConfigError(f"{path}: unexpected format tag {meta.get('format')!r}")
        if meta.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"{path}: unsupported format version {meta.get('format_version')}")
        cfg_dict = dict(meta["config"])
        cfg_dict["ablations"] = tuple(cfg_dict.get("ablations", ()))
        cfg = TrainConfig(**cfg_dict)

        nets = {}
        for name in _NETS:
            specs = [LayerSpec(**sd) for sd in meta["specs"][name]]
            net = DenseNet(specs, np.random.default_rng(0))
            for i in range(len(specs)):
                net.weights[i] = data[f"{name}_w{i}"].copy()
                net.biases[i] = data[f"{name}_b{i}"].copy()
            net.grad_w = [np.zeros_like(w) for w in net.weights]
            net.grad_b = [np.zeros_like(b) for b in net.biases]
            nets[name] = net

        theta = BilinearMap(data["theta"].shape[0], np.random.default_rng(0))
        theta.matrix = data["theta"].copy()
        theta.grad = np.zeros_like(theta.matrix)
        theta.trainable = bool(meta["theta_trainable"])

        bank = PrototypeBank(
            data["bank_mu_d"].shape[0], data["bank_mu_c"].shape[1], data["bank_mu_d"].shape[1]
        )
        bank.mu_d = data["bank_mu_d"].copy()
        bank.mu_c = data["bank_mu_c"].copy()
        bank.d_init = data["bank_d_init"].copy()
        bank.c_init = data["bank_c_init"].copy()
        bank.epoch = int(meta["bank_epoch"])

        assignment = SuperdomainAssignment(
            k=int(meta["assignment_k"]),
            assign=data["assign"].copy(),
            medoids=data["medoids"].copy(),
        )
        model = Model(
            f_g=nets["f_g"],
            f_d=nets["f_d"],
            f_c=nets["f_c"],
            d_d=nets["d_d"],
            d_c=nets["d_c"],
            theta=theta,
            n_subjects=int(meta["n_subjects"]),
            n_classes=int(meta["n_classes"]),
        )
        return FoldState(
            model=model,
            bank=bank,
            assignment=assignment,
            subject_to_sd=data["subject_to_sd"].copy(),
            config=cfg,
        )
