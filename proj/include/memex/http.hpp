#pragma once

// Small JSON requests suffer from Nagle/delayed-ACK stalls without this.
#ifndef CPPHTTPLIB_TCP_NODELAY
#define CPPHTTPLIB_TCP_NODELAY true
#endif
#include "httplib.h"
