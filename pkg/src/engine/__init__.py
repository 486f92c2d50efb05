"""
CAPE-KG engine: layered knowledge graph, case-scoped edits, edit-aware
retrieval, multi-hop reasoning and the evaluation harness.
"""
