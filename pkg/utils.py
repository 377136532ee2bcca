#!/usr/bin/python3
# -*- coding: utf-8 -*-

from pathlib import Path
from typing import Optional, Type, TypeVar

import numpy as np
from pydantic import BaseModel

from config import logger
from model_core import build_stage_data, stage_data_from_lists
from models import (
    ControllerDocument,
    MldModelDocument,
    PolyhedronDocument,
    TerminalDataDocument,
)
from terminal_offline import Controller, TerminalData, compute_link_matrices

Doc = TypeVar("Doc", bound=BaseModel)


def load_document(path: str, cls: Type[Doc]) -> Doc:
    try:
        return cls.model_validate_json(Path(path).read_text())
    except Exception as e:
        logger.error(f"Failed to load {cls.__name__} from {path}: {e}")
        raise


def save_document(doc: BaseModel, path: str) -> None:
    Path(path).write_text(doc.model_dump_json(indent=2))
    logger.info(f"wrote {type(doc).__name__} to {path}")


def terminal_document(terminal: TerminalData) -> TerminalDataDocument:
    return TerminalDataDocument(
        P=terminal.P.tolist(),
        K=np.atleast_2d(terminal.K).tolist(),
        invariant_set=PolyhedronDocument.from_polyhedron(terminal.invariant_set),
        links=[None if M is None else M.tolist() for M in terminal.links],
    )


def controller_document(controller: Controller) -> ControllerDocument:
    stage = controller.stage
    return ControllerDocument(
        model=MldModelDocument.from_model(stage.model),
        horizon=stage.T,
        Q=stage.Q[0].tolist(),
        R=stage.R[0].tolist(),
        Q_T=stage.Q[stage.T].tolist(),
        terminal=None if controller.terminal is None else terminal_document(controller.terminal),
    )


def controller_from_document(doc: ControllerDocument, horizon: Optional[int] = None) -> Controller:
    """
    Rebuild the controller. Link matrices are reused only when the horizon is
    unchanged; otherwise their number no longer fits.
    """
    model = doc.model.to_model()
    T = horizon or doc.horizon
    Q_T = np.asarray(doc.Q_T, dtype=float)
    Q, R = np.asarray(doc.Q, dtype=float), np.asarray(doc.R, dtype=float)
    if doc.terminal is None:
        stage = stage_data_from_lists(model, [Q] * T + [Q_T], [R] * T, [model.domain] * T)
        return Controller(stage)

    omega = doc.terminal.invariant_set.to_polyhedron()
    stage = build_stage_data(model, Q, R, T, terminal=(Q_T, omega))
    if T == doc.horizon:
        links = tuple(None if M is None else np.asarray(M, dtype=float) for M in doc.terminal.links)
    else:
        links = tuple(compute_link_matrices(stage))
    terminal = TerminalData(
        np.asarray(doc.terminal.P, dtype=float),
        np.asarray(doc.terminal.K, dtype=float),
        omega,
        links,
    )
    return Controller(stage, terminal)


def controller_from_model(doc: MldModelDocument, horizon: int) -> Controller:
    """A bare model file: Q = I, R = I unless given, Q_T = Q, no terminal set."""
    model = doc.to_model()
    Q = np.eye(model.n_x) if doc.Q is None else np.asarray(doc.Q, dtype=float)
    R = np.eye(model.n_in) if doc.R is None else np.asarray(doc.R, dtype=float)
    return Controller(build_stage_data(model, Q, R, horizon))


def load_controller(path: str, horizon: Optional[int] = None) -> Controller:
    """Either a controller file or a bare model file."""
    text = Path(path).read_text()
    try:
        return controller_from_document(ControllerDocument.model_validate_json(text), horizon)
    except ValueError:
        pass
    doc = MldModelDocument.model_validate_json(text)
    return controller_from_model(doc, horizon or 20)

