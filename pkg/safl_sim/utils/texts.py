"""Тексты сообщений командной строки."""

# ═══════════════════════════════════════════════════════════
# ОШИБКИ
# ═══════════════════════════════════════════════════════════

CONFIG_ERROR = "Ошибка конфигурации: {error}"

DIVERGENCE_ERROR = "Расходимость: {error}"

IO_ERROR = "Ошибка ввода-вывода: {error}"

UNKNOWN_VARIANTS = "нет таких вариантов: {names}; доступны: {available}"

COMPARE_USAGE = "Использование: compare <metrics.csv> <metrics.csv> [...] [--threshold X]"

INCOMPATIBLE_GRIDS = "несовместимые сетки раундов: общих раундов нет"

# ═══════════════════════════════════════════════════════════
# ОТЧЁТЫ
# ═══════════════════════════════════════════════════════════

RUN_DONE = "Готово: {variants} вариант(ов), {seeds} сид(ов) → {out}"

COMPARE_HEADER = "Сравнение по раундам (среднее ± стандартная ошибка)"

THRESHOLD_HEADER = "Раунды до mse < {threshold}"

THRESHOLD_ROW = "{label}: медиана {median}, достигли {reached}/{total}"

NEVER = "не достигнут"
