"""Сервисы симулятора."""
from safl_sim.services import objectives
from safl_sim.services import partitioner
from safl_sim.services import datasets
from safl_sim.services import local_trainer
from safl_sim.services import sa_mixer
from safl_sim.services import aggregator
from safl_sim.services import upload_gate
from safl_sim.services import verifier
from safl_sim.services import orchestrator
