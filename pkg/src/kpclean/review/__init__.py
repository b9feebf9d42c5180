from .store import (
    ReviewQueue,
    ReviewTask,
    ReviewVerdict,
    VerdictStore,
    build_overlay,
    enqueue_tasks,
)
