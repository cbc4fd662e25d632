"""SAFL Sim: детерминированный симулятор федеративного обучения с отжигом."""
