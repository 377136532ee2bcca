#!/usr/bin/python3
# -*- coding: utf-8 -*-

import numpy as np
import pytest
from pydantic import ValidationError

from conftest import clutch_model, clutch_stage
from model_core import Polyhedron, stage_data_from_lists
from models import (
    ControllerDocument,
    MldModelDocument,
    PolyhedronDocument,
    StudyRequest,
)
from terminal_offline import Controller, TerminalData, compute_link_matrices
from utils import controller_document, load_controller, load_document, save_document


def clutch_controller(T=4):
    stage = clutch_stage(T=T, terminal=True)
    terminal = TerminalData(
        P=2.0 * np.eye(2),
        K=np.zeros((1, 2)),
        invariant_set=stage.terminal_set,
        links=tuple(compute_link_matrices(stage)),
    )
    return Controller(stage, terminal)


class TestDocuments:
    def test_polyhedron_shape_checks(self):
        with pytest.raises(ValidationError):
            PolyhedronDocument(C=[[1.0, 0.0]], d=[1.0, 2.0], dim=2)
        with pytest.raises(ValidationError):
            PolyhedronDocument(C=[[1.0]], d=[1.0], dim=2)

    def test_empty_polyhedron_keeps_dimension(self):
        P = PolyhedronDocument.from_polyhedron(Polyhedron.full_space(3)).to_polyhedron()
        assert P.C.shape == (0, 3)

    def test_model_document(self):
        doc = MldModelDocument.from_model(clutch_model())
        model = doc.to_model()
        assert np.array_equal(model.G, clutch_model().G)
        assert (doc.n_x, doc.n_u, doc.m_u) == (2, 1, 1)

    def test_model_document_rejects_origin_outside(self):
        data = MldModelDocument.from_model(clutch_model()).model_dump()
        data["h"][0] = -1.0
        with pytest.raises(ValidationError) as exc:
            MldModelDocument(**data)
        assert "origin not in D" in str(exc.value)

    def test_model_document_rejects_declared_sizes(self):
        data = MldModelDocument.from_model(clutch_model()).model_dump()
        data["n_x"] = 3
        with pytest.raises(ValidationError):
            MldModelDocument(**data)

    def test_controller_document_needs_horizon(self):
        data = controller_document(Controller(clutch_stage(T=2))).model_dump()
        data["horizon"] = 0
        with pytest.raises(ValidationError):
            ControllerDocument(**data)


class TestStudyRequest:
    def test_defaults(self):
        req = StudyRequest()
        assert req.modes == ["warm", "cold"]
        assert req.error_scales == [0.0]

    def test_single_mode(self):
        assert StudyRequest(mode="cold").modes == ["cold"]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"error_scales": [-0.1]},
            {"error_scales": []},
            {"epsilon": -1.0},
            {"steps": 0},
            {"mode": "hot"},
        ],
    )
    def test_rejects(self, kwargs):
        with pytest.raises(ValidationError):
            StudyRequest(**kwargs)


class TestControllerFiles:
    def test_round_trip(self, tmp_path):
        ctrl = clutch_controller()
        path = str(tmp_path / "ctrl.json")
        save_document(controller_document(ctrl), path)
        back = load_controller(path)
        assert back.stage.T == 4
        for a, b in zip(ctrl.stage.D, back.stage.D):
            assert np.allclose(a.C, b.C) and np.allclose(a.d, b.d)
        assert np.allclose(back.stage.Q[4], 2.0 * np.eye(2))
        assert back.links[:2] == (None, None)
        assert np.allclose(back.links[2], ctrl.links[2])

    def test_new_horizon_recomputes_links(self, tmp_path):
        path = str(tmp_path / "ctrl.json")
        save_document(controller_document(clutch_controller()), path)
        back = load_controller(path, horizon=6)
        assert back.stage.T == 6
        assert len(back.links) == 5
        assert back.links[4].shape == (8, back.stage.D[5].n_facets)

    def test_terminal_weight_without_terminal_set(self, tmp_path):
        model = clutch_model()
        stage = stage_data_from_lists(model, [np.eye(2)] * 3 + [3.0 * np.eye(2)], [np.eye(2)] * 3, [model.domain] * 3)
        path = str(tmp_path / "ctrl.json")
        save_document(controller_document(Controller(stage)), path)
        back = load_controller(path)
        assert back.terminal is None
        assert np.allclose(back.stage.Q[3], 3.0 * np.eye(2))
        assert np.allclose(back.stage.Q[0], np.eye(2))

    def test_bare_model_file(self, tmp_path):
        path = str(tmp_path / "model.json")
        save_document(MldModelDocument.from_model(clutch_model()), path)
        ctrl = load_controller(path, horizon=3)
        assert ctrl.stage.T == 3
        assert ctrl.terminal is None
        assert np.allclose(ctrl.stage.R[0], np.eye(2))
        assert isinstance(load_document(path, MldModelDocument), MldModelDocument)

    def test_bad_file(self, tmp_path):
        path = tmp_path / "junk.json"
        path.write_text('{"n_x": 1}')
        with pytest.raises(ValidationError):
            load_controller(str(path))
