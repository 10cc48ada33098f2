"""promocontest — библиотека и CLI для динамических конкурсов за повышение.

Пакет содержит дискретизированные процессы типа, индексы Гиттинса и стратегические
индексы, движок конкурса, переборные оракулы и эксперименты.
"""

__all__ = [
    "__version__",
]

__version__ = "0.1.0"
