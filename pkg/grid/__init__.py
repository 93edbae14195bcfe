"""Sixth-order multi-machine network simulator in port-Hamiltonian form,
with a distributed optimal frequency controller."""
