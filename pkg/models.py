#!/usr/bin/python3
# -*- coding: utf-8 -*-

from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from model_core import MldModel, Polyhedron, validate_mld

Matrix = List[List[float]]


def _rows(a: np.ndarray) -> Matrix:
    return np.atleast_2d(np.asarray(a, dtype=float)).tolist()


def _matrix(rows: Matrix, n_cols: int) -> np.ndarray:
    # an empty list still needs its column count
    return np.asarray(rows, dtype=float).reshape(-1, n_cols)


class PolyhedronDocument(BaseModel):
    C: Matrix
    d: List[float]
    dim: int

    @model_validator(mode="after")
    def check_shape(self):
        if len(self.C) != len(self.d):
            raise ValueError(f"{len(self.C)} rows in C but {len(self.d)} in d")
        if any(len(r) != self.dim for r in self.C):
            raise ValueError(f"every row of C needs {self.dim} entries")
        return self

    @classmethod
    def from_polyhedron(cls, P: Polyhedron) -> "PolyhedronDocument":
        return cls(C=_rows(P.C) if P.n_facets else [], d=P.d.tolist(), dim=P.dim)

    def to_polyhedron(self) -> Polyhedron:
        return Polyhedron(_matrix(self.C, self.dim), np.asarray(self.d, dtype=float))


class MldModelDocument(BaseModel):
    n_x: int
    n_u: int
    m_u: int
    A: Matrix
    B: Matrix
    F: Matrix
    G: Matrix
    h: List[float]
    V: Matrix
    Q: Optional[Matrix] = None
    R: Optional[Matrix] = None

    @model_validator(mode="after")
    def check_model(self):
        model = self.to_model()
        report = validate_mld(model)
        if report:
            raise ValueError("; ".join(report))
        if (model.n_x, model.n_u, model.m_u) != (self.n_x, self.n_u, self.m_u):
            raise ValueError(
                f"declared sizes {(self.n_x, self.n_u, self.m_u)} do not match the matrices "
                f"{(model.n_x, model.n_u, model.m_u)}"
            )
        return self

    @classmethod
    def from_model(cls, model: MldModel, Q=None, R=None) -> "MldModelDocument":
        return cls(
            n_x=model.n_x,
            n_u=model.n_u,
            m_u=model.m_u,
            A=_rows(model.A),
            B=_rows(model.B),
            F=_rows(model.F),
            G=_rows(model.G),
            h=model.h.tolist(),
            V=_rows(model.V),
            Q=None if Q is None else _rows(Q),
            R=None if R is None else _rows(R),
        )

    def to_model(self) -> MldModel:
        n_in = self.n_u + self.m_u
        return MldModel(
            A=_matrix(self.A, self.n_x),
            B=_matrix(self.B, n_in),
            F=_matrix(self.F, self.n_x),
            G=_matrix(self.G, n_in),
            h=np.asarray(self.h, dtype=float),
            V=_matrix(self.V, n_in),
        )


class TerminalDataDocument(BaseModel):
    P: Matrix
    K: Matrix
    invariant_set: PolyhedronDocument
    links: List[Optional[Matrix]] = Field(default_factory=list)


class ControllerDocument(BaseModel):
    model: MldModelDocument
    horizon: int = Field(gt=0)
    Q: Matrix
    R: Matrix
    Q_T: Matrix
    terminal: Optional[TerminalDataDocument] = None


class StudyRequest(BaseModel):
    command: Literal["simulate", "study"] = "simulate"
    model: Optional[str] = None
    horizon: int = Field(default=20, gt=0)
    steps: int = Field(default=50, gt=0)
    trials: int = Field(default=1, gt=0)
    error_scales: List[float] = Field(default_factory=lambda: [0.0])
    seed: int = 0
    mode: Literal["warm", "cold", "both"] = "both"
    epsilon: float = Field(default=0.0, ge=0.0)
    upper_bound: bool = False
    x0: Optional[List[float]] = None
    out: Optional[str] = None
    summary: Optional[str] = None
    timings: bool = True
    verbose: bool = False

    @field_validator("error_scales")
    @classmethod
    def nonnegative_scales(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("at least one error scale is required")
        if any(c < 0 for c in v):
            raise ValueError(f"error scales must be nonnegative, got {v}")
        return v

    @property
    def modes(self) -> List[str]:
        return ["warm", "cold"] if self.mode == "both" else [self.mode]
