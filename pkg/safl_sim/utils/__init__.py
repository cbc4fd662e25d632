"""Утилиты симулятора."""
