from degkit.utils import set_thread_pool

set_thread_pool(4)
